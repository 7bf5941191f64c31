import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np


class StepLimitError(Exception):
    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


# Dormand-Prince 5(4) tableau
C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
B_EMBEDDED = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B - B_EMBEDDED

# dense output: y(t + s h) = y + h * (K^T P) [s, s^2, s^3, s^4]
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
PI_ALPHA = 0.7 / 5
PI_BETA = 0.4 / 5


@dataclass(frozen=True)
class SolveConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_steps: int = 100000
    dense_grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError(f"Solver tolerances must be positive, got rel_tol={self.rel_tol}, "
                             f"abs_tol={self.abs_tol}")


class TrajectoryRmse(NamedTuple):
    per_component: np.ndarray
    total: float
    blew_up: bool
    average_norm: np.ndarray


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(fun, t0, y0, f0, direction_span, config):
    scale = config.abs_tol + config.rel_tol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, direction_span)


def _dp_step(fun, t, y, f, h):
    K = np.empty((7, len(y)))
    K[0] = f
    for s in range(1, 7):
        K[s] = fun(t + C[s] * h, y + h * (A[s] @ K[:s]))
    # stage 7 is evaluated at the propagated solution (FSAL)
    y_new = y + h * (A[6] @ K[:6])
    return y_new, K, h * (E @ K)


def solve(model, theta, x0, grid, config=None):
    """Integrate x' = f(x, theta, t) from grid[0] and return the solution at every grid time."""
    config = config or SolveConfig()
    theta = np.asarray(theta, dtype=float)
    grid = np.asarray(grid, dtype=float)
    y = np.asarray(x0, dtype=float).copy()
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("Solution grid must be a non-empty vector")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("Solution grid must be strictly increasing")

    def fun(t, x):
        return model.f(x, theta, t)

    out = np.empty((len(grid), len(y)))
    out[0] = y
    t = grid[0]
    t_end = grid[-1]
    next_index = 1
    if len(grid) == 1:
        return out

    f = fun(t, y)
    h = _initial_step(fun, t, y, f, t_end - t, config)
    previous_error = 1e-4
    steps = 0
    rejected_last = False

    while next_index < len(grid):
        if steps >= config.max_steps:
            raise StepLimitError(f"DP45 exceeded {config.max_steps} steps at t={t:.6g}", last_time=t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepLimitError(f"DP45 step size underflow at t={t:.6g}", last_time=t)
        h = min(h, t_end - t)
        steps += 1

        with np.errstate(over='ignore', invalid='ignore'):
            y_new, K, error = _dp_step(fun, t, y, f, h)
            scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            error_norm = _rms(error / scale)
        if not np.isfinite(error_norm) or not np.all(np.isfinite(y_new)):
            h *= MIN_FACTOR
            rejected_last = True
            continue

        if error_norm > 1.0:
            h *= max(MIN_FACTOR, SAFETY * error_norm ** -0.2)
            rejected_last = True
            continue

        t_new = t + h if t + h < t_end else t_end
        Q = K.T @ P
        while next_index < len(grid) and grid[next_index] <= t_new:
            s = (grid[next_index] - t) / h
            out[next_index] = y + h * (Q @ np.array([s, s ** 2, s ** 3, s ** 4]))
            next_index += 1
        if next_index == len(grid):
            out[-1] = y_new

        if error_norm == 0.0:
            factor = MAX_FACTOR
        else:
            factor = SAFETY * error_norm ** -PI_ALPHA * previous_error ** PI_BETA
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
        if rejected_last:
            factor = min(1.0, factor)
        h *= factor
        previous_error = max(error_norm, 1e-4)
        rejected_last = False
        t, y, f = t_new, y_new, K[6]

    return out


def _integrate_squares(values, grid):
    """Left Riemann sum of values**2 over the grid, per column."""
    dt = np.diff(grid)
    return np.sum(values[:-1] ** 2 * dt[:, None], axis=0)


def average_norm(trajectory, grid):
    return np.sqrt(_integrate_squares(trajectory, grid))


def trajectory_rmse(model, theta_hat, x0_hat, theta_true, x0_true, interval, n_grid=2001, config=None):
    if n_grid < 100:
        raise ValueError(f"Trajectory RMSE needs at least 100 grid points, got {n_grid}")
    config = config or SolveConfig()
    grid = np.linspace(interval[0], interval[1], int(n_grid))
    truth = solve(model, theta_true, x0_true, grid, config)

    try:
        reconstructed = solve(model, theta_hat, x0_hat, grid, config)
        blew_up = not np.all(np.isfinite(reconstructed))
    except StepLimitError as e:
        logging.warning(f"Reconstructed trajectory failed at t={e.last_time}: {e}")
        blew_up = True

    if blew_up:
        inf = np.full(model.dim_state, np.inf)
        return TrajectoryRmse(per_component=inf, total=float('inf'), blew_up=True, average_norm=inf)

    squares = _integrate_squares(reconstructed - truth, grid)
    return TrajectoryRmse(per_component=np.sqrt(squares), total=float(np.sqrt(squares.sum())),
                          blew_up=False, average_norm=average_norm(reconstructed, grid))
