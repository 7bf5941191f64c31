import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from basis import eval_basis
from posterior import PosteriorState, as_target, make_posterior, to_unconstrained, unpack_draws
from quadrature import inner_rule
from sampler import SamplerInitializationError, sample, summarize

STOP_REASONS = ('interval-overlap', 'err-increase', 'cap-reached')


@dataclass(frozen=True)
class LambdaConfig:
    lambda0: float
    lambda_star: float
    lambda_max: float = 1e6
    alpha: float = 0.1
    multiplier: float = 10.0

    def __post_init__(self):
        if not 0 < self.lambda0 <= self.lambda_star <= self.lambda_max:
            raise ValueError(f"Need 0 < lambda0 <= lambda_star <= lambda_max, got "
                             f"{self.lambda0}, {self.lambda_star}, {self.lambda_max}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.multiplier > 1:
            raise ValueError(f"multiplier must exceed 1, got {self.multiplier}")

    def ladder(self, p):
        return self.lambda0 * self.multiplier ** p

    @property
    def num_rungs(self):
        """Ladder values lambda0 * multiplier**p not exceeding lambda_max."""
        return int(math.floor(math.log(self.lambda_max / self.lambda0, self.multiplier) + 1e-9)) + 1


@dataclass(frozen=True)
class Problem:
    model: object
    basis: object
    plan: object
    data: object
    prior_kind: str = 'integral'
    base: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'base', make_posterior(self.model, self.basis, self.plan,
                                                        self.data, 1.0, self.prior_kind))

    def posterior(self, lam):
        return self.base.with_lambda(lam)


@dataclass
class InitialEstimate:
    state: PosteriorState
    theta_mean: np.ndarray
    theta_lower: Optional[np.ndarray]
    theta_upper: Optional[np.ndarray]
    flat: bool = False


@dataclass
class LambdaStep:
    step: int
    lam: float
    theta_mean: np.ndarray
    theta_lower: Optional[np.ndarray]
    theta_upper: Optional[np.ndarray]
    sigma_mean: np.ndarray
    coeff_mean: np.ndarray
    err: float
    overlap: Optional[np.ndarray] = None
    mean_accept: float = float('nan')
    divergences: int = 0
    step_size: float = float('nan')
    wall_time: float = 0.0


@dataclass
class LambdaTrace:
    steps: List[LambdaStep]
    selected: float
    stop_reason: str

    @property
    def selected_index(self):
        return next(k for k, s in enumerate(self.steps) if s.lam == self.selected)

    @property
    def err_initial(self):
        return self.steps[0].err

    @property
    def err_selected(self):
        return self.steps[self.selected_index].err


@dataclass
class FitResult:
    lam: float
    spec: object
    chain: object
    theta: object
    sigma: object
    x0: object
    coeff_mean: np.ndarray
    draws: dict = field(repr=False)


def build_fit_result(spec, chain, level=0.95):
    draws = unpack_draws(spec, chain.draws)
    x0_draws = draws['coeffs'] @ spec.plan.basis_at_zero
    draws['x0'] = x0_draws
    return FitResult(
        lam=spec.lam,
        spec=spec,
        chain=chain,
        theta=summarize(draws['theta'], level=level),
        sigma=summarize(draws['sigma'], level=level),
        x0=summarize(x0_draws, level=level),
        coeff_mean=draws['coeffs'].mean(axis=0),
        draws=draws,
    )


def discrepancy_err(spec, theta_hat, coeff_hat):
    """Squared distance between the data and the integrated ODE started at the spline's initial value.

    The endpoint term compares the spline at the right end of the domain with the same integral.
    """
    basis = spec.basis
    model = spec.model
    plan = spec.plan
    t1, tJ = basis.domain
    theta_hat = np.asarray(theta_hat, dtype=float)
    coeff_hat = np.asarray(coeff_hat, dtype=float)

    uppers = np.append(spec.data.times, tJ)
    rules = [inner_rule(basis, t, plan.K, plan.inner_scheme) if t > t1 else None for t in uppers]
    nodes = np.concatenate([r.nodes for r in rules if r is not None] or [np.empty(0)])
    integrals = np.zeros((len(uppers), model.dim_state))
    if len(nodes):
        field_values = model.f(eval_basis(basis, nodes).values @ coeff_hat.T, theta_hat, nodes)
        offset = 0
        for k, rule in enumerate(rules):
            if rule is None:
                continue
            n = len(rule.nodes)
            integrals[k] = rule.weights @ field_values[offset:offset + n]
            offset += n

    start = plan.basis_at_zero @ coeff_hat.T
    end = plan.basis_at_end @ coeff_hat.T
    data_resid = (spec.y - integrals[:-1] - start) * spec.mask
    end_resid = end - integrals[-1] - start
    return float(np.sum(data_resid ** 2) + np.sum(end_resid ** 2))


def overlap_ratio(current, previous):
    lo, hi = float(current[0]), float(current[1])
    width = hi - lo
    if not width > 0:
        logging.warning(f"Degenerate credible interval [{lo}, {hi}]; overlap ratio set to 0")
        return 0.0
    overlap = min(hi, float(previous[1])) - max(lo, float(previous[0]))
    return float(min(max(overlap / width, 0.0), 1.0))


def _overlaps(current, previous):
    if previous.theta_lower is None or current.theta_lower is None:
        return np.zeros(len(current.theta_mean))
    return np.array([
        overlap_ratio((current.theta_lower[k], current.theta_upper[k]),
                      (previous.theta_lower[k], previous.theta_upper[k]))
        for k in range(len(current.theta_mean))
    ])


def _run_chain(problem, lam, start_state, nuts, seed, progress):
    spec = problem.posterior(lam)
    try:
        chain = sample(as_target(spec), start_state.to_vector(), nuts.with_seed(seed),
                       progress=progress, desc=f"lambda={lam:g}", lambda_value=lam)
    except SamplerInitializationError as e:
        e.lambda_value = lam
        raise
    return spec, chain


def select_lambda(problem, init, config, nuts, level=0.95, progress=False):
    """Increase lambda by `multiplier` until the estimates stabilize; return the trace and the fit at the selected lambda."""
    positive = problem.model.positive_mask
    spec0 = problem.posterior(config.lambda0)
    steps = [LambdaStep(
        step=0,
        lam=config.lambda0,
        theta_mean=np.asarray(init.theta_mean, dtype=float),
        theta_lower=init.theta_lower,
        theta_upper=init.theta_upper,
        sigma_mean=np.exp(init.state.log_sigma),
        coeff_mean=init.state.coeffs,
        err=discrepancy_err(spec0, init.theta_mean, init.state.coeffs),
    )]
    logging.info(f"lambda={config.lambda0:g} (initialization): Err={steps[0].err:.6g}")
    fits = {}
    selected, reason = None, None

    for p in range(1, config.num_rungs):
        lam = config.ladder(p)
        previous = steps[-1]
        start_state = PosteriorState(theta_u=to_unconstrained(previous.theta_mean, positive),
                                     coeffs=init.state.coeffs,
                                     log_sigma=np.log(previous.sigma_mean))
        started = time.time()
        spec, chain = _run_chain(problem, lam, start_state, nuts, nuts.seed + p, progress)
        fit = build_fit_result(spec, chain, level)
        fits[p] = fit

        step = LambdaStep(step=p, lam=lam, theta_mean=fit.theta.means, theta_lower=fit.theta.lower,
                          theta_upper=fit.theta.upper, sigma_mean=fit.sigma.means,
                          coeff_mean=fit.coeff_mean,
                          err=discrepancy_err(spec, fit.theta.means, fit.coeff_mean),
                          mean_accept=float(np.mean(chain.accept_stats[nuts.num_warmup:])),
                          divergences=chain.divergence_count, step_size=chain.step_size,
                          wall_time=time.time() - started)
        step.overlap = _overlaps(step, previous)
        steps.append(step)
        logging.info(f"lambda={lam:g}: Err={step.err:.6g}, accept={step.mean_accept:.3f}, "
                     f"divergences={step.divergences}, step size={step.step_size:.4g}, "
                     f"min overlap={step.overlap.min():.3f}")

        at_cap = lam * config.multiplier > config.lambda_max * (1 + 1e-9)
        if lam < config.lambda_star * (1 - 1e-9):
            continue
        if step.err <= previous.err and np.all(step.overlap > 1 - config.alpha):
            selected, reason = p, 'interval-overlap'
        elif step.err > previous.err:
            selected, reason = p - 1, 'err-increase'
        elif at_cap:
            selected, reason = p, 'cap-reached'
        if selected is not None:
            break

    if selected is None:
        selected, reason = len(steps) - 1, 'cap-reached'

    trace = LambdaTrace(steps=steps, selected=steps[selected].lam, stop_reason=reason)
    logging.info(f"Selected lambda={trace.selected:g} ({reason})")

    if selected == 0:
        start_state = PosteriorState(theta_u=to_unconstrained(steps[0].theta_mean, positive),
                                     coeffs=init.state.coeffs, log_sigma=init.state.log_sigma)
        spec, chain = _run_chain(problem, config.lambda0, start_state, nuts, nuts.seed, progress)
        fits[0] = build_fit_result(spec, chain, level)
    return trace, fits[selected]
