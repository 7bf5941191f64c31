import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class InvalidDimensionError(Exception):
    pass


class OutOfDomainError(Exception):
    pass


class RankDeficiencyError(Exception):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


_EVALUATIONS = {'count': 0}


def evaluation_count():
    return _EVALUATIONS['count']


@dataclass(frozen=True)
class BasisSpec:
    """Clamped B-spline basis with equally spaced interior knots.

    `order` is the spline order (4 = cubic) and `num_basis` the number of
    basis functions L; there are L - order interior knots.
    """
    order: int
    num_basis: int
    domain: tuple
    knots: np.ndarray = field(repr=False, compare=False)

    @property
    def degree(self):
        return self.order - 1

    @property
    def num_interior_knots(self):
        return self.num_basis - self.order

    @property
    def breakpoints(self):
        return np.unique(self.knots)


@dataclass(frozen=True)
class BasisMatrix:
    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray


def make_basis(order, num_basis, domain):
    order = int(order)
    num_basis = int(num_basis)
    t1, tJ = float(domain[0]), float(domain[1])

    if order < 2:
        raise InvalidDimensionError(f"Spline order must be at least 2, got {order}")
    if num_basis < order:
        raise InvalidDimensionError(
            f"Number of basis functions ({num_basis}) must be at least the order ({order})")
    if not np.isfinite(t1) or not np.isfinite(tJ) or tJ <= t1:
        raise InvalidDimensionError(f"Degenerate basis domain [{t1}, {tJ}]")

    n_interior = num_basis - order
    interior = np.linspace(t1, tJ, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(order, t1), interior, np.full(order, tJ)])
    return BasisSpec(order=order, num_basis=num_basis, domain=(t1, tJ), knots=knots)


def greville_abscissae(spec):
    """Coefficients that reproduce the identity function t -> t."""
    p = spec.degree
    knots = spec.knots
    return np.array([knots[l + 1:l + p + 1].mean() for l in range(spec.num_basis)])


def _check_times(spec, times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t1, tJ = spec.domain
    slack = 1e-10 * (tJ - t1)
    outside = (times < t1 - slack) | (times > tJ + slack) | ~np.isfinite(times)
    if np.any(outside):
        bad = times[outside][0]
        raise OutOfDomainError(f"Time {bad} lies outside the basis domain [{t1}, {tJ}]")
    return np.clip(times, t1, tJ)


def _degree_table(spec, times):
    """Cox-de Boor table: entry p holds all degree-p functions on the full knot vector."""
    knots = spec.knots
    n_knots = len(knots)
    span = np.searchsorted(knots, times, side='right') - 1
    # the right endpoint belongs to the last non-degenerate span
    span = np.clip(span, spec.order - 1, spec.num_basis - 1)

    current = np.zeros((len(times), n_knots - 1))
    current[np.arange(len(times)), span] = 1.0
    table = [current]

    for p in range(1, spec.order):
        n_funcs = n_knots - p - 1
        nxt = np.zeros((len(times), n_funcs))
        for i in range(n_funcs):
            left_den = knots[i + p] - knots[i]
            right_den = knots[i + p + 1] - knots[i + 1]
            if left_den > 0:
                nxt[:, i] += (times - knots[i]) / left_den * current[:, i]
            if right_den > 0:
                nxt[:, i] += (knots[i + p + 1] - times) / right_den * current[:, i + 1]
        table.append(nxt)
        current = nxt
    return table


def _derivative(table, knots, p, nu):
    if nu == 0:
        return table[p]
    lower = _derivative(table, knots, p - 1, nu - 1)
    n_funcs = lower.shape[1] - 1
    out = np.zeros((lower.shape[0], n_funcs))
    for i in range(n_funcs):
        left_den = knots[i + p] - knots[i]
        right_den = knots[i + p + 1] - knots[i + 1]
        if left_den > 0:
            out[:, i] += p / left_den * lower[:, i]
        if right_den > 0:
            out[:, i] -= p / right_den * lower[:, i + 1]
    return out


def basis_derivatives(spec, times, nu):
    times = _check_times(spec, times)
    _EVALUATIONS['count'] += 1
    if nu >= spec.order:
        return np.zeros((len(times), spec.num_basis))
    table = _degree_table(spec, times)
    return _derivative(table, spec.knots, spec.degree, nu)


def eval_basis(spec, times):
    times = _check_times(spec, times)
    _EVALUATIONS['count'] += 1
    table = _degree_table(spec, times)
    values = table[spec.degree]
    derivs = _derivative(table, spec.knots, spec.degree, 1)
    return BasisMatrix(times=times, values=values, derivs=derivs)


def roughness_penalty_matrix(spec):
    """Exact integral of products of second derivatives, Gauss rule per knot span."""
    # quadrature imports this module at load time
    from quadrature import composite_rule

    rule = composite_rule(spec, spec.domain[0], spec.domain[1], max(spec.order - 2, 1))
    second = basis_derivatives(spec, rule.nodes, 2)
    return second.T @ (rule.weights[:, None] * second)


def smooth_data(spec, times, observations, roughness_penalty):
    """Penalized least-squares spline fit, one component (column) at a time.

    Missing observations are NaN. Returns an (I x L) coefficient matrix.
    """
    observations = np.asarray(observations, dtype=float)
    if observations.ndim == 1:
        observations = observations[:, None]
    values = eval_basis(spec, times).values
    omega = roughness_penalty_matrix(spec) if roughness_penalty > 0 else 0.0

    coeffs = np.empty((observations.shape[1], spec.num_basis))
    for i in range(observations.shape[1]):
        observed = np.isfinite(observations[:, i])
        if observed.sum() < spec.order:
            raise RankDeficiencyError(
                f"Component {i} has {observed.sum()} observations; at least {spec.order} are needed",
                component=i)
        design = values[observed]
        normal = design.T @ design + roughness_penalty * omega
        eigenvalues = np.linalg.eigvalsh(normal)
        if eigenvalues[0] <= 1e-10 * eigenvalues[-1]:
            raise RankDeficiencyError(
                f"Penalized normal matrix for component {i} is singular "
                f"(eigenvalue ratio {eigenvalues[0] / eigenvalues[-1]:.2e})",
                component=i)
        coeffs[i] = cho_solve(cho_factor(normal), design.T @ observations[observed, i])
        logging.debug(f"Smoothed component {i} with penalty {roughness_penalty}")
    return coeffs
