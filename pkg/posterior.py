import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from basis import eval_basis
from models import scaled_error

PRIOR_KINDS = ('integral', 'derivative')
GRADIENT_STEP = 1e-5
GRADIENT_THRESHOLD = 1e-5


class PosteriorState(NamedTuple):
    theta_u: np.ndarray
    coeffs: np.ndarray
    log_sigma: np.ndarray

    def to_vector(self):
        return np.concatenate([self.theta_u, self.coeffs.ravel(), self.log_sigma])

    @classmethod
    def from_vector(cls, vector, dim_params, dim_state, num_basis):
        vector = np.asarray(vector, dtype=float)
        split = dim_params + dim_state * num_basis
        return cls(theta_u=vector[:dim_params],
                   coeffs=vector[dim_params:split].reshape(dim_state, num_basis),
                   log_sigma=vector[split:split + dim_state])


@dataclass(frozen=True)
class PosteriorSpec:
    model: object
    basis: object
    plan: object
    data: object
    lam: float
    prior_kind: str
    basis_at_obs: object = field(repr=False)
    y: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    n_obs: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.model.dim_params + self.model.dim_state * self.basis.num_basis + self.model.dim_state

    def state_from_vector(self, vector):
        return PosteriorState.from_vector(vector, self.model.dim_params,
                                          self.model.dim_state, self.basis.num_basis)

    def with_lambda(self, lam):
        """Same problem at another smoothing parameter; precomputed matrices are shared."""
        if not lam > 0:
            raise ValueError(f"Smoothing parameter must be positive, got {lam}")
        return PosteriorSpec(model=self.model, basis=self.basis, plan=self.plan, data=self.data,
                             lam=float(lam), prior_kind=self.prior_kind,
                             basis_at_obs=self.basis_at_obs, y=self.y, mask=self.mask,
                             n_obs=self.n_obs)


def make_posterior(model, basis, plan, data, lam, prior_kind='integral'):
    if prior_kind not in PRIOR_KINDS:
        raise ValueError(f"Unknown prior kind '{prior_kind}', expected one of {PRIOR_KINDS}")
    if not lam > 0:
        raise ValueError(f"Smoothing parameter must be positive, got {lam}")
    values = np.asarray(data.values, dtype=float)
    if values.shape[1] != model.dim_state:
        raise ValueError(f"Data has {values.shape[1]} components, model '{model.name}' "
                         f"expects {model.dim_state}")
    mask = np.isfinite(values)
    return PosteriorSpec(
        model=model,
        basis=basis,
        plan=plan,
        data=data,
        lam=float(lam),
        prior_kind=prior_kind,
        basis_at_obs=eval_basis(basis, data.times),
        y=np.where(mask, values, 0.0),
        mask=mask,
        n_obs=mask.sum(axis=0),
    )


def to_constrained(theta_u, positive):
    return np.where(positive, np.exp(np.where(positive, theta_u, 0.0)), theta_u)


def to_unconstrained(theta, positive):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta[positive] <= 0):
        raise ValueError(f"Positive-constrained parameters must be > 0, got {theta}")
    return np.where(positive, np.log(np.where(positive, theta, 1.0)), theta)


def _residuals(spec, coeffs):
    fitted = spec.basis_at_obs.values @ coeffs.T
    return (spec.y - fitted) * spec.mask


def log_likelihood(spec, state):
    resid = _residuals(spec, state.coeffs)
    inv_var = np.exp(-2.0 * state.log_sigma)
    return float(np.sum(-spec.n_obs * state.log_sigma - 0.5 * inv_var * np.sum(resid ** 2, axis=0)))


def _integral_residual(spec, coeffs, theta):
    plan = spec.plan
    x_inner = plan.basis_at_inner.values @ coeffs.T
    field_inner = spec.model.f(x_inner, theta, plan.inner_nodes)
    quad = plan.inner_weights @ field_inner
    shifted = plan.basis_at_outer.values - plan.basis_at_zero
    return shifted @ coeffs.T - quad, x_inner


def _derivative_residual(spec, coeffs, theta):
    plan = spec.plan
    x_outer = plan.basis_at_outer.values @ coeffs.T
    return plan.basis_at_outer.derivs @ coeffs.T - spec.model.f(x_outer, theta, plan.outer.nodes), x_outer


def log_prior_integral(spec, state):
    theta = to_constrained(state.theta_u, spec.model.positive_mask)
    resid, _ = _integral_residual(spec, state.coeffs, theta)
    return float(-0.5 * spec.lam * np.sum(spec.plan.outer.weights[:, None] * resid ** 2))


def log_prior_derivative(spec, state):
    theta = to_constrained(state.theta_u, spec.model.positive_mask)
    resid, _ = _derivative_residual(spec, state.coeffs, theta)
    return float(-0.5 * spec.lam * np.sum(spec.plan.outer.weights[:, None] * resid ** 2))


def log_prior_coeffs(spec, state):
    if spec.prior_kind == 'integral':
        return log_prior_integral(spec, state)
    return log_prior_derivative(spec, state)


def log_posterior(spec, state):
    positive = spec.model.positive_mask
    return log_likelihood(spec, state) + log_prior_coeffs(spec, state) + float(np.sum(state.theta_u[positive]))


def log_posterior_and_grad(spec, state):
    """Log posterior and its gradient, both over (theta_u, coeffs, log_sigma)."""
    model = spec.model
    plan = spec.plan
    positive = model.positive_mask
    coeffs = state.coeffs
    theta = to_constrained(state.theta_u, positive)

    # likelihood
    resid = _residuals(spec, coeffs)
    inv_var = np.exp(-2.0 * state.log_sigma)
    sq = np.sum(resid ** 2, axis=0)
    value = np.sum(-spec.n_obs * state.log_sigma - 0.5 * inv_var * sq)
    grad_coeffs = (resid * inv_var).T @ spec.basis_at_obs.values
    grad_log_sigma = -spec.n_obs + inv_var * sq

    # coefficient prior
    weights = plan.outer.weights[:, None]
    if spec.prior_kind == 'integral':
        r, x_inner = _integral_residual(spec, coeffs, theta)
        g_r = -spec.lam * weights * r
        g_inner = plan.inner_weights.T @ g_r
        jx = model.jac_x(x_inner, theta, plan.inner_nodes)
        jt = model.jac_theta(x_inner, theta, plan.inner_nodes)
        grad_coeffs += g_r.T @ (plan.basis_at_outer.values - plan.basis_at_zero)
        grad_coeffs -= np.einsum('ni,nij->nj', g_inner, jx).T @ plan.basis_at_inner.values
        grad_theta = -np.einsum('ni,nik->k', g_inner, jt)
    else:
        r, x_outer = _derivative_residual(spec, coeffs, theta)
        g_r = -spec.lam * weights * r
        jx = model.jac_x(x_outer, theta, plan.outer.nodes)
        jt = model.jac_theta(x_outer, theta, plan.outer.nodes)
        grad_coeffs += g_r.T @ plan.basis_at_outer.derivs
        grad_coeffs -= np.einsum('mi,mij->mj', g_r, jx).T @ plan.basis_at_outer.values
        grad_theta = -np.einsum('mi,mik->k', g_r, jt)
    value += -0.5 * np.sum(weights * r ** 2) * spec.lam

    # flat prior on positive theta, sampled on log scale
    value += np.sum(state.theta_u[positive])
    grad_theta_u = np.where(positive, grad_theta * theta + 1.0, grad_theta)

    grad = np.concatenate([grad_theta_u, grad_coeffs.ravel(), grad_log_sigma])
    return float(value), grad


def grad_log_posterior(spec, state):
    return log_posterior_and_grad(spec, state)[1]


def as_target(spec):
    """Flat-vector log density with gradient, for the sampler."""
    def target(vector):
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            value, grad = log_posterior_and_grad(spec, spec.state_from_vector(vector))
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(vector)
        return value, grad
    return target


def unpack_draws(spec, draws):
    """Split unconstrained draws (n x dim) into theta, coefficient and sigma arrays."""
    draws = np.atleast_2d(draws)
    model = spec.model
    P, I, L = model.dim_params, model.dim_state, spec.basis.num_basis
    theta_u = draws[:, :P]
    return {
        'theta': to_constrained(theta_u, model.positive_mask),
        'coeffs': draws[:, P:P + I * L].reshape(-1, I, L),
        'sigma': np.exp(draws[:, P + I * L:]),
    }


@dataclass(frozen=True)
class GradientReport:
    prior_kind: str
    n_states: int
    max_error: float
    worst_coordinate: int


def random_state(spec, rng):
    model = spec.model
    return PosteriorState(
        theta_u=rng.normal(0.0, 0.5, model.dim_params),
        coeffs=rng.normal(0.0, 1.0, (model.dim_state, spec.basis.num_basis)),
        log_sigma=rng.normal(-1.0, 0.3, model.dim_state),
    )


def check_gradient(spec, n_states=50, seed=0, step=GRADIENT_STEP, floor=1e-8):
    """Compare the analytic gradient with central differences of log_posterior.

    Errors use `scaled_error`: relative for entries above 1 in magnitude, absolute below.
    Entries where both gradients are under `floor` count as agreeing.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_index = -1
    for _ in range(n_states):
        state = random_state(spec, rng)
        vector = state.to_vector()
        _, analytic = log_posterior_and_grad(spec, state)
        numeric = np.empty_like(vector)
        for k in range(len(vector)):
            h = step * max(1.0, abs(vector[k]))
            up = vector.copy()
            down = vector.copy()
            up[k] += h
            down[k] -= h
            numeric[k] = (log_posterior(spec, spec.state_from_vector(up))
                          - log_posterior(spec, spec.state_from_vector(down))) / (2 * h)
        errors = scaled_error(analytic, numeric)
        errors[(np.abs(analytic) < floor) & (np.abs(numeric) < floor)] = 0.0
        if errors.max() > worst:
            worst = float(errors.max())
            worst_index = int(np.argmax(errors))

    logging.debug(f"Gradient check ({spec.prior_kind} prior, {spec.model.name}): "
                  f"max relative error {worst:.2e}")
    return GradientReport(prior_kind=spec.prior_kind, n_states=n_states,
                          max_error=worst, worst_coordinate=worst_index)
