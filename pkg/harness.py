import time
import logging
from functools import wraps
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from basis import eval_basis, make_basis, smooth_data
from data_io import Dataset, read_dataset
from lambda_select import InitialEstimate, LambdaConfig, Problem, select_lambda
from models import get_model
from odesolve import SolveConfig, solve, trajectory_rmse
from posterior import PosteriorState, log_posterior_and_grad, log_prior_coeffs, to_unconstrained
from quadrature import build_plan, default_quadrature_sizes
from sampler import NutsConfig, sample, summarize

DATA_SOLVER = SolveConfig(rel_tol=1e-10, abs_tol=1e-10)
MAX_FAILURE_RATE = 0.2


class StudyFailureError(Exception):
    def __init__(self, message, failure_rate=None):
        super().__init__(message)
        self.failure_rate = failure_rate


def timer_decorator(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        result = func(*args, **kwargs)
        elapsed_time = time.time() - start_time
        if elapsed_time > 1:
            logging.debug(f"{func.__name__} took {elapsed_time:.2f} seconds")
        return result
    return wrapper


@dataclass(frozen=True)
class FitSettings:
    lambda_config: LambdaConfig
    nuts: NutsConfig = NutsConfig()
    order: int = 4
    num_basis: int = 83
    M: object = 'auto'
    K: object = 'auto'
    inner_scheme: str = 'composite'
    prior_kind: str = 'integral'
    roughness_penalty: float = 0.1
    sigma_init: float = 0.1
    theta_init: Optional[tuple] = None
    level: float = 0.95
    n_grid: int = 2001
    solver: SolveConfig = SolveConfig()
    progress: bool = False


@dataclass(frozen=True)
class Scenario:
    model_name: str
    theta: tuple
    x0: tuple
    sigma: tuple
    times: tuple
    settings: FitSettings
    replications: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError(f"replications must be at least 1, got {self.replications}")
        model = get_model(self.model_name)
        if len(self.theta) != model.dim_params or len(self.x0) != model.dim_state:
            raise ValueError(f"Scenario dimensions do not match model '{self.model_name}'")
        if len(self.sigma) != model.dim_state or len(self.times) != model.dim_state:
            raise ValueError(f"Scenario needs one noise level and one time schedule per component")

    @property
    def grid(self):
        return np.unique(np.concatenate([np.asarray(t, dtype=float) for t in self.times]))


@dataclass
class ReplicationResult:
    replication: int
    seed: int
    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    x0_hat: np.ndarray
    lambda_hat: float
    stop_reason: str
    rmse: object
    rmse_true_x0: object
    wall_time: float
    err_lambda0: float = float('nan')
    err_selected: float = float('nan')


@dataclass
class StudyResult:
    scenario: Scenario
    replications: List[ReplicationResult]
    ledger: 'FailureLedger'
    parameters: List[dict] = field(default_factory=list)
    trajectories: List[dict] = field(default_factory=list)

    @property
    def failures(self):
        return self.ledger.records

    @property
    def failure_rate(self):
        return self.ledger.failure_rate


@dataclass
class DatasetFit:
    dataset: Dataset
    problem: Problem
    init: InitialEstimate
    trace: object
    fit: object
    bands: List[dict]


class FailureLedger:
    """Collects per-replication failures and decides whether a study is still usable."""

    def __init__(self, max_failure_rate=MAX_FAILURE_RATE):
        self.max_failure_rate = max_failure_rate
        self.attempts = 0
        self.records = []

    def record_attempt(self, success, replication=None, seed=None, error=None):
        self.attempts += 1
        if success:
            return
        self.records.append({
            'replication': replication,
            'seed': seed,
            'error_type': type(error).__name__,
            'message': str(error),
            'lambda': getattr(error, 'lambda_value', None),
        })

    @property
    def failure_rate(self):
        return len(self.records) / self.attempts if self.attempts else 0.0

    def check_health(self):
        if self.failure_rate > self.max_failure_rate:
            raise StudyFailureError(
                f"{len(self.records)}/{self.attempts} replications failed "
                f"({self.failure_rate:.1%} > {self.max_failure_rate:.0%})",
                failure_rate=self.failure_rate)

    def get_stats(self):
        if not self.attempts:
            return "No replications attempted"
        return (f"{self.attempts} replications, "
                f"{(1 - self.failure_rate) * 100:.1f}% succeeded, {len(self.records)} failed")


def generate_data(scenario, replication_seed):
    """Solve the true system at tight tolerance and add Gaussian noise on each component's schedule."""
    model = get_model(scenario.model_name)
    grid = scenario.grid
    truth = solve(model, scenario.theta, scenario.x0, grid, DATA_SOLVER)

    rng = np.random.default_rng(replication_seed)
    noise = rng.standard_normal(truth.shape) * np.asarray(scenario.sigma, dtype=float)
    values = np.full(truth.shape, np.nan)
    for i, times in enumerate(scenario.times):
        observed = np.isin(grid, np.asarray(times, dtype=float))
        values[observed, i] = truth[observed, i] + noise[observed, i]

    t1 = float(grid[0])
    return Dataset(times=grid - t1, values=values, names=model.state_names, time_offset=t1,
                   domain=(0.0, float(grid[-1] - t1)))


def build_problem(model, data, settings):
    basis = make_basis(settings.order, settings.num_basis, data.fit_domain())
    M, K = settings.M, settings.K
    if M == 'auto' or K == 'auto':
        default_M, default_K = default_quadrature_sizes(basis, model.poly_degree)
        M = default_M if M == 'auto' else M
        K = default_K if K == 'auto' else K
    logging.debug(f"Quadrature sizes: M={M}, K={K} ({settings.inner_scheme})")
    plan = build_plan(basis, M, K, settings.inner_scheme)
    return Problem(model=model, basis=basis, plan=plan, data=data, prior_kind=settings.prior_kind)


def _theta_is_flat(spec, state, rng, trials=5):
    reference = log_prior_coeffs(spec, state)
    for _ in range(trials):
        moved = state._replace(theta_u=state.theta_u + rng.normal(0.0, 0.5, len(state.theta_u)))
        if abs(log_prior_coeffs(spec, moved) - reference) > 1e-12 * (1 + abs(reference)):
            return False
    return True


@timer_decorator
def initialize(problem, lambda0, settings):
    """Smoothed coefficients, fixed noise scale and a theta-only chain at lambda0."""
    model = problem.model
    positive = model.positive_mask
    data = problem.data
    coeffs = smooth_data(problem.basis, data.times, data.values, settings.roughness_penalty)
    log_sigma = np.full(model.dim_state, np.log(settings.sigma_init))
    theta_init = np.ones(model.dim_params) if settings.theta_init is None else np.asarray(settings.theta_init, dtype=float)
    state = PosteriorState(theta_u=to_unconstrained(theta_init, positive), coeffs=coeffs,
                           log_sigma=log_sigma)
    spec = problem.posterior(lambda0)
    nuts = settings.nuts

    if _theta_is_flat(spec, state, np.random.default_rng(nuts.seed)):
        logging.warning(f"Log posterior does not depend on theta for model '{model.name}'; "
                        f"skipping the initial theta chain")
        return InitialEstimate(state=state, theta_mean=theta_init, theta_lower=None,
                               theta_upper=None, flat=True)

    P = model.dim_params

    def theta_target(theta_u):
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            value, grad = log_posterior_and_grad(spec, state._replace(theta_u=theta_u))
        if not np.isfinite(value) or not np.all(np.isfinite(grad[:P])):
            return -np.inf, np.zeros(P)
        return value, grad[:P]

    chain = sample(theta_target, state.theta_u, nuts, progress=settings.progress,
                   desc='theta init', lambda_value=lambda0)
    summary = summarize(chain, positive, level=settings.level)
    logging.info(f"Initial theta estimate at lambda={lambda0:g}: {np.round(summary.means, 4).tolist()}")
    state = state._replace(theta_u=to_unconstrained(summary.means, positive))
    return InitialEstimate(state=state, theta_mean=summary.means, theta_lower=summary.lower,
                           theta_upper=summary.upper)


@timer_decorator
def fit_problem(problem, settings, seed=None):
    if seed is not None:
        settings = replace(settings, nuts=settings.nuts.with_seed(seed))
    init = initialize(problem, settings.lambda_config.lambda0, settings)
    trace, fit = select_lambda(problem, init, settings.lambda_config, settings.nuts,
                               level=settings.level, progress=settings.progress)
    return init, trace, fit


def replication_seeds(seed, replications):
    """Independent (data, chain) seed pairs derived from the scenario seed."""
    children = np.random.SeedSequence(seed).spawn(replications)
    return [tuple(int(s) for s in child.generate_state(2)) for child in children]


def run_replication(scenario, replication, seeds):
    data_seed, chain_seed = seeds
    started = time.time()
    model = get_model(scenario.model_name)
    settings = scenario.settings
    data = generate_data(scenario, data_seed)
    problem = build_problem(model, data, settings)
    _, trace, fit = fit_problem(problem, settings, seed=chain_seed % (2 ** 31))

    interval = data.fit_domain()
    theta_hat = fit.theta.means
    x0_hat = fit.x0.means
    rmse = trajectory_rmse(model, theta_hat, x0_hat, scenario.theta, scenario.x0, interval,
                           settings.n_grid, settings.solver)
    rmse_true_x0 = trajectory_rmse(model, theta_hat, scenario.x0, scenario.theta, scenario.x0,
                                   interval, settings.n_grid, settings.solver)
    if rmse.blew_up:
        logging.warning(f"Replication {replication}: reconstructed trajectory is not finite")
    logging.info(f"Replication {replication}: lambda={trace.selected:g}, "
                 f"theta={np.round(theta_hat, 4).tolist()}, trajectory RMSE={rmse.total:.4f}")
    return ReplicationResult(replication=replication, seed=data_seed, theta_hat=theta_hat,
                             sigma_hat=fit.sigma.means, x0_hat=x0_hat, lambda_hat=trace.selected,
                             stop_reason=trace.stop_reason, rmse=rmse, rmse_true_x0=rmse_true_x0,
                             wall_time=time.time() - started, err_lambda0=trace.err_initial,
                             err_selected=trace.err_selected)


def _safe_replication(scenario, replication, seeds):
    try:
        return run_replication(scenario, replication, seeds)
    except Exception as e:
        logging.warning(f"Replication {replication} failed: {type(e).__name__}: {e}")
        return e


def _iqr(values):
    # rank-based: no interpolation between infinite entries
    q25, q75 = np.percentile(values, [25, 75], method='inverted_cdf')
    if np.isinf(q75):
        return float('inf')
    return float(q75 - q25)


def _finite_mean(values):
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else float('inf')


def aggregate(scenario, results):
    model = get_model(scenario.model_name)
    n = len(results)
    parameters = []
    trajectories = []
    if not n:
        return parameters, trajectories

    theta_hat = np.array([r.theta_hat for r in results])
    theta_true = np.asarray(scenario.theta, dtype=float)
    for k, name in enumerate(model.param_names):
        parameters.append({
            'parameter': name,
            'true_value': theta_true[k],
            'mean': float(theta_hat[:, k].mean()),
            'rmse': float(np.sqrt(np.mean((theta_hat[:, k] - theta_true[k]) ** 2))),
            'n_replications': n,
        })

    per_comp = np.array([r.rmse.per_component for r in results])
    per_comp_true = np.array([r.rmse_true_x0.per_component for r in results])
    norms = np.array([r.rmse.average_norm for r in results])
    for i, name in enumerate(model.state_names):
        trajectories.append({
            'component': name,
            'median_rmse': float(np.median(per_comp[:, i])),
            'iqr_rmse': _iqr(per_comp[:, i]),
            'median_rmse_true_x0': float(np.median(per_comp_true[:, i])),
            'iqr_rmse_true_x0': _iqr(per_comp_true[:, i]),
            'mean_average_norm': _finite_mean(norms[:, i]),
            'blown_up': int(np.sum(np.isinf(per_comp[:, i]))),
            'n_replications': n,
        })
    totals = np.array([r.rmse.total for r in results])
    totals_true = np.array([r.rmse_true_x0.total for r in results])
    trajectories.append({
        'component': 'total',
        'median_rmse': float(np.median(totals)),
        'iqr_rmse': _iqr(totals),
        'median_rmse_true_x0': float(np.median(totals_true)),
        'iqr_rmse_true_x0': _iqr(totals_true),
        'mean_average_norm': _finite_mean(np.sqrt(np.sum(norms ** 2, axis=1))),
        'blown_up': sum(int(r.rmse.blew_up) for r in results),
        'n_replications': n,
    })
    return parameters, trajectories


@timer_decorator
def run_study(scenario, threads=None):
    seeds = replication_seeds(scenario.seed, scenario.replications)
    n_jobs = threads or -1
    logging.info(f"Running {scenario.replications} replications of '{scenario.model_name}' "
                 f"({scenario.settings.prior_kind} prior) on {n_jobs if n_jobs > 0 else 'all'} workers")

    outcomes = Parallel(n_jobs=n_jobs, return_as='generator')(
        delayed(_safe_replication)(scenario, r, seeds[r]) for r in range(scenario.replications))
    outcomes = list(tqdm(outcomes, total=scenario.replications, desc='replications',
                         disable=not scenario.settings.progress))

    ledger = FailureLedger()
    results = []
    for r, outcome in enumerate(outcomes):
        if isinstance(outcome, Exception):
            ledger.record_attempt(False, replication=r, seed=seeds[r][0], error=outcome)
        else:
            ledger.record_attempt(True)
            results.append(outcome)
    logging.info(f"Study finished: {ledger.get_stats()}")

    parameters, trajectories = aggregate(scenario, results)
    return StudyResult(scenario=scenario, replications=results, ledger=ledger,
                       parameters=parameters, trajectories=trajectories)


def trajectory_bands(fit, grid, level=0.95):
    """Pointwise spline trajectory means and central intervals from the coefficient draws."""
    values = eval_basis(fit.spec.basis, grid).values
    paths = np.einsum('nil,gl->ngi', fit.draws['coeffs'], values)
    tail = (1 - level) / 2
    lower, upper = np.quantile(paths, [tail, 1 - tail], axis=0)
    return paths.mean(axis=0), lower, upper


@timer_decorator
def fit_dataset(data_path, model, settings, domain=None):
    dataset = read_dataset(data_path, domain)
    if dataset.num_components != model.dim_state:
        raise ValueError(f"Dataset has {dataset.num_components} components, model "
                         f"'{model.name}' expects {model.dim_state}")
    problem = build_problem(model, dataset, settings)
    init, trace, fit = fit_problem(problem, settings)

    t1, tJ = dataset.fit_domain()
    grid = np.linspace(t1, tJ, settings.n_grid)
    mean, lower, upper = trajectory_bands(fit, grid, settings.level)
    bands = []
    for i, name in enumerate(dataset.names):
        for g, t in enumerate(grid):
            bands.append({'time': t + dataset.time_offset, 'component': name,
                          'mean': mean[g, i], 'lower': lower[g, i], 'upper': upper[g, i]})
    return DatasetFit(dataset=dataset, problem=problem, init=init, trace=trace, fit=fit, bands=bands)
