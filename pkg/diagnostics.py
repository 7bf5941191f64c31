import logging
from typing import NamedTuple

import numpy as np

from basis import eval_basis, greville_abscissae, make_basis
from data_io import Dataset
from models import check_jacobians, get_model, numeric_jacobian_model
from odesolve import SolveConfig, solve
from posterior import GRADIENT_THRESHOLD, PRIOR_KINDS, check_gradient, make_posterior
from quadrature import build_plan, gauss_legendre
from sampler import NutsConfig, sample

GRADIENT_PROBLEMS = {
    'fn': {'theta': (0.2, 0.2, 3.0), 'x0': (-1.0, 1.0), 'sigma': 0.2},
    'lv': {'theta': (1.0, 0.5, 1.0, 0.5), 'x0': (1.0, 0.5), 'sigma': 0.1},
}


class CheckResult(NamedTuple):
    name: str
    passed: bool
    value: float
    threshold: float


def _result(name, value, threshold):
    passed = bool(value < threshold)
    level = logging.INFO if passed else logging.WARNING
    logging.log(level, f"{name}: {value:.3g} (threshold {threshold:.3g}) {'PASS' if passed else 'FAIL'}")
    return CheckResult(name=name, passed=passed, value=float(value), threshold=float(threshold))


def gradient_check_problem(model_name, prior_kind='integral', seed=0, lam=1.0):
    """Small synthetic posterior on [0, 4] with 12 cubic B-splines."""
    model = get_model(model_name)
    setup = GRADIENT_PROBLEMS[model.name]
    times = np.linspace(0.0, 4.0, 21)
    truth = solve(model, setup['theta'], setup['x0'], times, SolveConfig(rel_tol=1e-10, abs_tol=1e-10))
    rng = np.random.default_rng(seed)
    data = Dataset(times=times, values=truth + setup['sigma'] * rng.standard_normal(truth.shape),
                   names=model.state_names)
    basis = make_basis(4, 12, (0.0, 4.0))
    plan = build_plan(basis, 24, 4)
    return make_posterior(model, basis, plan, data, lam, prior_kind)


def quadrature_exactness(max_nodes=20):
    worst = 0.0
    for n in range(1, max_nodes + 1):
        rule = gauss_legendre(n, (0.0, 1.0))
        for k in range(2 * n):
            exact = 1.0 / (k + 1)
            worst = max(worst, abs(rule.integrate(rule.nodes ** k) - exact) / exact)
    return worst


def partition_of_unity(num_points=1001):
    basis = make_basis(4, 83, (0.0, 20.0))
    values = eval_basis(basis, np.linspace(0.0, 20.0, num_points)).values
    return float(np.max(np.abs(values.sum(axis=1) - 1.0)))


def linear_precision(num_points=1001):
    """Largest error of the spline with Greville coefficients against t -> t."""
    basis = make_basis(4, 83, (0.0, 20.0))
    times = np.linspace(0.0, 20.0, num_points)
    spline = eval_basis(basis, times).values @ greville_abscissae(basis)
    return float(np.max(np.abs(spline - times)))


def exponential_solver_error(rate=0.7, horizon=5.0):
    decay = numeric_jacobian_model('decay', lambda x, theta, t=0.0: -theta[0] * x, dim_state=1,
                                   dim_params=1, poly_degree=1)
    grid = np.linspace(0.0, horizon, 51)
    solution = solve(decay, (rate,), (1.0,), grid, SolveConfig(rel_tol=1e-12, abs_tol=1e-14))
    exact = np.exp(-rate * grid)
    return float(np.max(np.abs(solution[:, 0] - exact) / exact))


def gaussian_moments(seed=0, dim=10, num_draws=4000):
    """Largest standardized mean error and relative variance error of NUTS on a standard normal."""
    def target(q):
        return -0.5 * float(q @ q), -q

    config = NutsConfig(num_iterations=num_draws + 200, num_warmup=200, seed=seed)
    chain = sample(target, np.zeros(dim), config)
    mean_error = float(np.max(np.abs(chain.draws.mean(axis=0))) * np.sqrt(num_draws))
    variance_error = float(np.max(np.abs(chain.draws.var(axis=0) - 1.0)))
    return mean_error, variance_error


def run_property_suite(seed=0):
    results = [
        _result('quadrature exactness (n <= 20)', quadrature_exactness(), 1e-10),
        _result('partition of unity', partition_of_unity(), 1e-12),
        _result('linear precision', linear_precision(), 1e-11),
    ]
    for name in ('fn', 'lv'):
        report = check_jacobians(get_model(name), seed=seed, threshold=np.inf)
        results.append(_result(f'jacobians {name}', report.max_error, 1e-5))
    for name in ('fn', 'lv'):
        for prior_kind in PRIOR_KINDS:
            spec = gradient_check_problem(name, prior_kind, seed)
            report = check_gradient(spec, n_states=50, seed=seed)
            results.append(_result(f'gradient {name} {prior_kind}', report.max_error, GRADIENT_THRESHOLD))
    results.append(_result('solver vs exponential', exponential_solver_error(), 1e-8))
    mean_error, variance_error = gaussian_moments(seed)
    results.append(_result('nuts gaussian mean (standard errors)', mean_error, 4.0))
    results.append(_result('nuts gaussian variance', variance_error, 0.15))
    return results
