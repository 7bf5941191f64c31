import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np


class UnknownModelError(Exception):
    pass


class JacobianValidationError(Exception):
    def __init__(self, message, max_error=None):
        super().__init__(message)
        self.max_error = max_error


JACOBIAN_STEP = 1e-6
JACOBIAN_THRESHOLD = 1e-5


@dataclass(frozen=True)
class OdeModel:
    """Vector field x' = f(x, theta, t) with analytic Jacobians.

    All callables accept a state array of shape (..., I) and broadcast over the
    leading axes: f returns (..., I), jac_x (..., I, I) and jac_theta (..., I, P).
    """
    name: str
    dim_state: int
    dim_params: int
    f: Callable
    jac_x: Callable
    jac_theta: Callable
    param_positive: Tuple[bool, ...]
    poly_degree: int
    param_names: Tuple[str, ...] = ()
    state_names: Tuple[str, ...] = ()

    @property
    def positive_mask(self):
        return np.array(self.param_positive, dtype=bool)

    def __post_init__(self):
        if len(self.param_positive) != self.dim_params:
            raise ValueError(f"Model {self.name}: param_positive has {len(self.param_positive)} "
                             f"entries for {self.dim_params} parameters")
        if not self.param_names:
            object.__setattr__(self, 'param_names',
                               tuple(f"theta{p + 1}" for p in range(self.dim_params)))
        if not self.state_names:
            object.__setattr__(self, 'state_names',
                               tuple(f"x{i + 1}" for i in range(self.dim_state)))


def fn_model():
    def f(x, theta, t=0.0):
        a, b, c = theta
        V, R = x[..., 0], x[..., 1]
        return np.stack([c * (V - V ** 3 / 3 + R), -(V - a + b * R) / c], axis=-1)

    def jac_x(x, theta, t=0.0):
        a, b, c = theta
        V = x[..., 0]
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = c * (1 - V ** 2)
        out[..., 0, 1] = c
        out[..., 1, 0] = -1.0 / c
        out[..., 1, 1] = -b / c
        return out

    def jac_theta(x, theta, t=0.0):
        a, b, c = theta
        V, R = x[..., 0], x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 3))
        out[..., 0, 2] = V - V ** 3 / 3 + R
        out[..., 1, 0] = 1.0 / c
        out[..., 1, 1] = -R / c
        out[..., 1, 2] = (V - a + b * R) / c ** 2
        return out

    return OdeModel(name='fn', dim_state=2, dim_params=3, f=f, jac_x=jac_x, jac_theta=jac_theta,
                    param_positive=(True, True, True), poly_degree=3,
                    param_names=('a', 'b', 'c'), state_names=('V', 'R'))


def lv_model():
    def f(x, theta, t=0.0):
        t1, t2, t3, t4 = theta
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([t1 * x1 - t2 * x1 * x2, -t3 * x2 + t4 * x1 * x2], axis=-1)

    def jac_x(x, theta, t=0.0):
        t1, t2, t3, t4 = theta
        x1, x2 = x[..., 0], x[..., 1]
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = t1 - t2 * x2
        out[..., 0, 1] = -t2 * x1
        out[..., 1, 0] = t4 * x2
        out[..., 1, 1] = -t3 + t4 * x1
        return out

    def jac_theta(x, theta, t=0.0):
        x1, x2 = x[..., 0], x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 4))
        out[..., 0, 0] = x1
        out[..., 0, 1] = -x1 * x2
        out[..., 1, 2] = -x2
        out[..., 1, 3] = x1 * x2
        return out

    return OdeModel(name='lv', dim_state=2, dim_params=4, f=f, jac_x=jac_x, jac_theta=jac_theta,
                    param_positive=(True, True, True, True), poly_degree=2,
                    param_names=('theta1', 'theta2', 'theta3', 'theta4'),
                    state_names=('hare', 'lynx'))


def _central_difference(func, point, step):
    """Derivative of func along every coordinate of `point` (last axis)."""
    columns = []
    for k in range(point.shape[-1]):
        h = np.asarray(step * np.maximum(1.0, np.abs(point[..., k])))
        up = point.copy()
        down = point.copy()
        up[..., k] += h
        down[..., k] -= h
        columns.append((func(up) - func(down)) / (2 * h[..., None]))
    return np.stack(columns, axis=-1)


def numeric_jacobian_model(name, f, dim_state, dim_params, param_positive=None, poly_degree=3,
                           param_names=(), state_names=(), step=JACOBIAN_STEP):
    """Wrap a bare vector field with central-difference Jacobians.

    Accuracy is limited to roughly step**2 relative error, so gradient checks
    against these models should use a looser tolerance.
    """
    if param_positive is None:
        param_positive = (True,) * dim_params

    def jac_x(x, theta, t=0.0):
        x = np.asarray(x, dtype=float)
        return _central_difference(lambda z: f(z, theta, t), x, step)

    def jac_theta(x, theta, t=0.0):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        cols = []
        for k in range(dim_params):
            h = step * max(1.0, abs(theta[k]))
            up = theta.copy()
            down = theta.copy()
            up[k] += h
            down[k] -= h
            cols.append((f(x, up, t) - f(x, down, t)) / (2 * h))
        return np.stack(cols, axis=-1)

    return OdeModel(name=name, dim_state=dim_state, dim_params=dim_params, f=f, jac_x=jac_x,
                    jac_theta=jac_theta, param_positive=tuple(param_positive),
                    poly_degree=poly_degree, param_names=tuple(param_names),
                    state_names=tuple(state_names))


@dataclass(frozen=True)
class JacobianReport:
    model: str
    trials: int
    max_error_x: float
    max_error_theta: float

    @property
    def max_error(self):
        return max(self.max_error_x, self.max_error_theta)


def scaled_error(analytic, numeric):
    """Elementwise |a - n| / max(|a|, |n|, 1).

    Relative for entries of magnitude above 1, absolute below it.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / scale


def _max_scaled_error(analytic, numeric):
    return float(np.max(scaled_error(analytic, numeric)))


def check_jacobians(model, trials=100, seed=0, threshold=JACOBIAN_THRESHOLD):
    if trials < 1:
        raise ValueError("check_jacobians needs at least one trial")
    rng = np.random.default_rng(seed)
    worst_x = 0.0
    worst_theta = 0.0

    for _ in range(trials):
        x = rng.uniform(-2.0, 2.0, model.dim_state)
        theta = rng.uniform(0.1, 3.0, model.dim_params)
        t = rng.uniform(0.0, 20.0)

        numeric_x = _central_difference(lambda z: model.f(z, theta, t), x, JACOBIAN_STEP)
        numeric_theta = _central_difference(lambda p: model.f(x, p, t), theta, JACOBIAN_STEP)
        worst_x = max(worst_x, _max_scaled_error(model.jac_x(x, theta, t), numeric_x))
        worst_theta = max(worst_theta, _max_scaled_error(model.jac_theta(x, theta, t), numeric_theta))

    report = JacobianReport(model=model.name, trials=trials,
                            max_error_x=worst_x, max_error_theta=worst_theta)
    logging.info(f"Jacobian check for {model.name}: max relative error {report.max_error:.2e} "
                 f"over {trials} trials")
    if report.max_error > threshold:
        raise JacobianValidationError(
            f"Analytic Jacobians of model '{model.name}' disagree with finite differences "
            f"(max relative error {report.max_error:.2e} > {threshold:.0e})",
            max_error=report.max_error)
    return report


_REGISTRY = {
    'fn': fn_model,
    'lv': lv_model,
}

_ALIASES = {
    'fitzhugh_nagumo': 'fn',
    'fitzhugh-nagumo': 'fn',
    'lotka_volterra': 'lv',
    'lotka-volterra': 'lv',
}


def register_model(name, factory):
    if not callable(factory):
        raise TypeError(f"Model factory for '{name}' must be callable")
    if str(name).lower() in _REGISTRY:
        logging.warning(f"Replacing registered model '{name}'")
    _REGISTRY[str(name).lower()] = factory


def available_models():
    return sorted(_REGISTRY)


def get_model(name):
    key = _ALIASES.get(str(name).lower(), str(name).lower())
    if key not in _REGISTRY:
        raise UnknownModelError(
            f"Unknown model '{name}'. Available models: {', '.join(available_models())}")
    return _REGISTRY[key]()
