import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from basis import eval_basis


class QuadratureConvergenceError(Exception):
    pass


NEWTON_TOLERANCE = 1e-14
NEWTON_MAX_ITERATIONS = 100
INNER_SCHEMES = ('composite', 'single')


@dataclass(frozen=True)
class GaussRule:
    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple

    def integrate(self, values):
        """Apply the rule along the leading axis of `values`."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class QuadraturePlan:
    """Outer rule on the domain plus one inner rule on [t1, xi_m] per outer node.

    Inner nodes of all M rules are merged into one sorted node set so that
    the inner integrals of any integrand sampled there are `inner_weights @ F`.
    """
    outer: GaussRule
    inner: list
    K: int
    inner_scheme: str
    inner_nodes: np.ndarray = field(repr=False)
    inner_weights: np.ndarray = field(repr=False)
    basis_at_outer: object = field(repr=False)
    basis_at_inner: object = field(repr=False)
    basis_at_zero: np.ndarray = field(repr=False)
    basis_at_end: np.ndarray = field(repr=False)

    @property
    def M(self):
        return len(self.outer.nodes)


def _legendre(n, x):
    """P_n(x) and its derivative from the three-term recursion."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, n * (x * p - p_prev) / (x ** 2 - 1)


@lru_cache(maxsize=None)
def _reference_rule(n):
    """Legendre roots and weights on [-1, 1] by Newton iteration."""
    x = np.cos(np.pi * (np.arange(1, n + 1) - 0.25) / (n + 0.5))

    for _ in range(NEWTON_MAX_ITERATIONS):
        p, dp = _legendre(n, x)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) <= NEWTON_TOLERANCE:
            break
    else:
        raise QuadratureConvergenceError(
            f"Newton iteration for the {n}-point Gauss-Legendre rule did not converge "
            f"within {NEWTON_MAX_ITERATIONS} iterations")

    _, dp = _legendre(n, x)
    weights = 2.0 / ((1 - x ** 2) * dp ** 2)

    order = np.argsort(x)
    x, weights = x[order], weights[order]
    # exact symmetry about zero
    x = 0.5 * (x - x[::-1])
    weights = 0.5 * (weights + weights[::-1])
    x.setflags(write=False)
    weights.setflags(write=False)
    return x, weights


def gauss_legendre(n, interval=(-1.0, 1.0)):
    n = int(n)
    a, b = float(interval[0]), float(interval[1])
    if n < 1:
        raise ValueError(f"Number of Gauss nodes must be at least 1, got {n}")
    if not b > a:
        raise ValueError(f"Gauss rule needs a < b, got [{a}, {b}]")
    x, w = _reference_rule(n)
    half = 0.5 * (b - a)
    nodes = half * x + 0.5 * (a + b)
    return GaussRule(nodes=nodes, weights=half * w, interval=(a, b))


def composite_rule(spec, a, b, K):
    """K-point Gauss rule on every piece of [a, b] cut at the basis breakpoints."""
    a, b = float(a), float(b)
    breaks = spec.breakpoints
    cuts = np.concatenate([[a], breaks[(breaks > a) & (breaks < b)], [b]])
    pieces = [gauss_legendre(K, (lo, hi)) for lo, hi in zip(cuts[:-1], cuts[1:])]
    nodes = np.concatenate([piece.nodes for piece in pieces])
    weights = np.concatenate([piece.weights for piece in pieces])
    return GaussRule(nodes=nodes, weights=weights, interval=(a, b))


def inner_rule(spec, upper, K, inner_scheme='composite'):
    t1 = spec.domain[0]
    if inner_scheme == 'composite':
        return composite_rule(spec, t1, upper, K)
    if inner_scheme == 'single':
        return gauss_legendre(K, (t1, upper))
    raise ValueError(f"Unknown inner quadrature scheme: {inner_scheme}")


def _merge_inner(rules):
    all_nodes = np.concatenate([rule.nodes for rule in rules])
    owners = np.concatenate([np.full(len(rule.nodes), m) for m, rule in enumerate(rules)])
    all_weights = np.concatenate([rule.weights for rule in rules])

    nodes, position = np.unique(all_nodes, return_inverse=True)
    weights = np.zeros((len(rules), len(nodes)))
    np.add.at(weights, (owners, position), all_weights)
    return nodes, weights


def build_plan(spec, M, K, inner_scheme='composite'):
    M, K = int(M), int(K)
    if M < 1 or K < 1:
        raise ValueError(f"Quadrature sizes must be positive, got M={M}, K={K}")
    if inner_scheme not in INNER_SCHEMES:
        raise ValueError(f"Unknown inner quadrature scheme: {inner_scheme}")

    outer = gauss_legendre(M, spec.domain)
    inner = [inner_rule(spec, xi, K, inner_scheme) for xi in outer.nodes]
    inner_nodes, inner_weights = _merge_inner(inner)

    ends = eval_basis(spec, np.array(spec.domain))
    plan = QuadraturePlan(
        outer=outer,
        inner=inner,
        K=K,
        inner_scheme=inner_scheme,
        inner_nodes=inner_nodes,
        inner_weights=inner_weights,
        basis_at_outer=eval_basis(spec, outer.nodes),
        basis_at_inner=eval_basis(spec, inner_nodes),
        basis_at_zero=ends.values[0],
        basis_at_end=ends.values[1],
    )
    logging.debug(f"Quadrature plan: M={M}, K={K}, {inner_scheme} inner rules, "
                  f"{len(inner_nodes)} distinct inner nodes")
    return plan


def default_quadrature_sizes(spec, model_poly_degree):
    degree = spec.degree
    M = max(math.ceil((degree + 1) * spec.num_interior_knots / 2), spec.order)
    K = math.ceil((degree * model_poly_degree + 1) / 2)
    return M, K
