import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from tqdm import tqdm

MAX_ENERGY_ERROR = 1000.0
INIT_RETRIES = 100
INIT_JITTER = 0.1
INIT_BUFFER_FRACTION = 0.15
TERM_BUFFER_FRACTION = 0.10
BASE_WINDOW = 25


class SamplerInitializationError(Exception):
    def __init__(self, message, lambda_value=None):
        super().__init__(message)
        self.lambda_value = lambda_value


@dataclass(frozen=True)
class NutsConfig:
    num_iterations: int = 400
    num_warmup: int = 200
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 1

    def __post_init__(self):
        if not 0 <= self.num_warmup < self.num_iterations:
            raise ValueError(f"Warmup ({self.num_warmup}) must be smaller than the number of "
                             f"iterations ({self.num_iterations})")
        if not 0 < self.target_accept < 1:
            raise ValueError(f"target_accept must lie in (0, 1), got {self.target_accept}")
        if not 1 <= self.max_tree_depth <= 12:
            raise ValueError(f"max_tree_depth must lie in [1, 12], got {self.max_tree_depth}")

    @property
    def num_kept(self):
        return self.num_iterations - self.num_warmup

    def with_seed(self, seed):
        return NutsConfig(self.num_iterations, self.num_warmup, self.target_accept,
                          self.max_tree_depth, int(seed))


@dataclass
class Chain:
    draws: np.ndarray
    log_density: np.ndarray
    accept_stats: np.ndarray
    tree_depths: np.ndarray
    n_leapfrog: np.ndarray
    divergence_count: int
    warmup_divergences: int
    step_size: float
    # diagonal inverse metric, i.e. the adapted posterior variance estimates
    mass_diag: np.ndarray

    @property
    def mean_accept(self):
        return float(np.mean(self.accept_stats)) if len(self.accept_stats) else float('nan')


class Summary(NamedTuple):
    means: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance statistic."""

    def __init__(self, prox_center=0.0, t0=10, kappa=0.75, gamma=0.05):
        self.prox_center = prox_center
        self.t0 = t0
        self.kappa = kappa
        self.gamma = gamma
        self.reset()

    def reset(self, prox_center=None):
        if prox_center is not None:
            self.prox_center = prox_center
        self._x_t = self.prox_center
        self._x_avg = 0.0
        self._g_avg = 0.0
        self._t = 0

    def step(self, g):
        self._t += 1
        self._g_avg = (1 - 1 / (self._t + self.t0)) * self._g_avg + g / (self._t + self.t0)
        self._x_t = self.prox_center - math.sqrt(self._t) / self.gamma * self._g_avg
        weight_t = self._t ** (-self.kappa)
        self._x_avg = (1 - weight_t) * self._x_avg + weight_t * self._x_t

    def get_state(self):
        return self._x_t, self._x_avg


class WelfordVariance:
    def __init__(self, dim):
        self.dim = dim
        self.reset()

    def reset(self):
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def regularized_variance(self):
        if self.n < 2:
            return np.ones(self.dim)
        var = self.m2 / (self.n - 1)
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


def warmup_windows(num_warmup):
    """Metric adaptation windows: doubling from 25 iterations between the init and final buffers."""
    if num_warmup < 20:
        return []
    start = int(INIT_BUFFER_FRACTION * num_warmup)
    end_middle = num_warmup - int(TERM_BUFFER_FRACTION * num_warmup)
    size = min(BASE_WINDOW, end_middle - start)
    windows = []
    while start < end_middle:
        end = start + size
        if end + 2 * size > end_middle:
            end = end_middle
        windows.append((start, end))
        start = end
        size *= 2
    return windows


def hamiltonian(log_density, p, inv_metric):
    return -log_density + 0.5 * float(np.sum(p * p * inv_metric))


def leapfrog(target, q, p, grad, step_size, inv_metric):
    p_half = p + 0.5 * step_size * grad
    q_new = q + step_size * inv_metric * p_half
    logp_new, grad_new = target(q_new)
    p_new = p_half + 0.5 * step_size * grad_new
    return q_new, p_new, logp_new, grad_new


class _Tree(NamedTuple):
    q_minus: np.ndarray
    p_minus: np.ndarray
    g_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    g_plus: np.ndarray
    q_prop: np.ndarray
    logp_prop: float
    grad_prop: np.ndarray
    log_weight: float
    rho: np.ndarray
    invalid: bool
    divergent: bool
    sum_accept: float
    n_leapfrog: int


def _log_uniform(rng):
    return math.log1p(-rng.uniform())


def _no_uturn(p_sharp_minus, p_sharp_plus, rho):
    return float(p_sharp_minus @ rho) > 0 and float(p_sharp_plus @ rho) > 0


def _merge(left, right, q_prop, logp_prop, grad_prop, log_weight, inv_metric):
    """Join two adjacent subtrees (left earlier in time) and apply the generalized U-turn checks."""
    rho = left.rho + right.rho
    turning = not _no_uturn(inv_metric * left.p_minus, inv_metric * right.p_plus, rho)
    if not turning:
        rho_left = left.rho + right.p_minus
        turning = not _no_uturn(inv_metric * left.p_minus, inv_metric * right.p_minus, rho_left)
    if not turning:
        rho_right = left.p_plus + right.rho
        turning = not _no_uturn(inv_metric * left.p_plus, inv_metric * right.p_plus, rho_right)
    return _Tree(left.q_minus, left.p_minus, left.g_minus, right.q_plus, right.p_plus, right.g_plus,
                 q_prop, logp_prop, grad_prop, log_weight, rho,
                 turning or left.invalid or right.invalid,
                 left.divergent or right.divergent,
                 left.sum_accept + right.sum_accept,
                 left.n_leapfrog + right.n_leapfrog)


def _build_tree(target, q, p, grad, direction, depth, step_size, inv_metric, H0, rng):
    if depth == 0:
        q1, p1, logp1, g1 = leapfrog(target, q, p, grad, direction * step_size, inv_metric)
        H1 = hamiltonian(logp1, p1, inv_metric) if np.isfinite(logp1) else np.inf
        energy_error = H1 - H0
        divergent = not np.isfinite(energy_error) or energy_error > MAX_ENERGY_ERROR
        accept = 0.0 if divergent else math.exp(min(0.0, -energy_error))
        log_weight = -energy_error if not divergent else -np.inf
        return _Tree(q1, p1, g1, q1, p1, g1, q1, logp1, g1, log_weight, p1.copy(),
                     divergent, divergent, accept, 1)

    first = _build_tree(target, q, p, grad, direction, depth - 1, step_size, inv_metric, H0, rng)
    if first.invalid:
        return first
    if direction > 0:
        second = _build_tree(target, first.q_plus, first.p_plus, first.g_plus, direction,
                             depth - 1, step_size, inv_metric, H0, rng)
    else:
        second = _build_tree(target, first.q_minus, first.p_minus, first.g_minus, direction,
                             depth - 1, step_size, inv_metric, H0, rng)

    log_weight = np.logaddexp(first.log_weight, second.log_weight)
    # uniform multinomial choice inside a subtree
    if not second.invalid and _log_uniform(rng) < second.log_weight - log_weight:
        proposal = (second.q_prop, second.logp_prop, second.grad_prop)
    else:
        proposal = (first.q_prop, first.logp_prop, first.grad_prop)

    left, right = (first, second) if direction > 0 else (second, first)
    return _merge(left, right, *proposal, log_weight, inv_metric)


def nuts_transition(target, q0, logp0, grad0, step_size, inv_metric, max_tree_depth, rng):
    """One multinomial NUTS transition; returns the new point and per-transition statistics."""
    p0 = rng.standard_normal(len(q0)) / np.sqrt(inv_metric)
    H0 = hamiltonian(logp0, p0, inv_metric)
    tree = _Tree(q0, p0, grad0, q0, p0, grad0, q0, logp0, grad0, 0.0, p0.copy(),
                 False, False, 0.0, 0)

    depth = 0
    divergent = False
    while depth < max_tree_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        if direction > 0:
            new = _build_tree(target, tree.q_plus, tree.p_plus, tree.g_plus, 1, depth,
                              step_size, inv_metric, H0, rng)
        else:
            new = _build_tree(target, tree.q_minus, tree.p_minus, tree.g_minus, -1, depth,
                              step_size, inv_metric, H0, rng)
        depth += 1
        sum_accept = tree.sum_accept + new.sum_accept
        n_leapfrog = tree.n_leapfrog + new.n_leapfrog
        if new.invalid:
            divergent = new.divergent
            tree = tree._replace(sum_accept=sum_accept, n_leapfrog=n_leapfrog)
            break

        # biased progressive sampling favours the newer half
        if _log_uniform(rng) < new.log_weight - tree.log_weight:
            proposal = (new.q_prop, new.logp_prop, new.grad_prop)
        else:
            proposal = (tree.q_prop, tree.logp_prop, tree.grad_prop)
        log_weight = np.logaddexp(tree.log_weight, new.log_weight)
        left, right = (tree, new) if direction > 0 else (new, tree)
        tree = _merge(left, right, *proposal, log_weight, inv_metric)
        if tree.invalid:
            break

    accept_stat = tree.sum_accept / max(tree.n_leapfrog, 1)
    return tree.q_prop, tree.logp_prop, tree.grad_prop, accept_stat, depth, tree.n_leapfrog, divergent


def find_reasonable_step_size(target, q, logp, grad, inv_metric, rng, step_size=1.0):
    """Double or halve the step size until a single leapfrog step crosses acceptance 0.5."""
    p = rng.standard_normal(len(q)) / np.sqrt(inv_metric)
    H0 = hamiltonian(logp, p, inv_metric)

    def log_accept(eps):
        _, p1, logp1, _ = leapfrog(target, q, p, grad, eps, inv_metric)
        if not np.isfinite(logp1):
            return -np.inf
        return H0 - hamiltonian(logp1, p1, inv_metric)

    direction = 1 if log_accept(step_size) > math.log(0.5) else -1
    for _ in range(100):
        step_size *= 2.0 ** direction
        if (log_accept(step_size) > math.log(0.5)) != (direction > 0):
            break
        if not 1e-8 < step_size < 1e3:
            break
    return float(step_size)


def _initial_point(target, init, rng, lambda_value=None):
    q = np.asarray(init, dtype=float).copy()
    logp, grad = target(q)
    for attempt in range(INIT_RETRIES):
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            if attempt:
                logging.debug(f"Sampler initialized after {attempt} jittered retries")
            return q, logp, grad
        q = np.asarray(init, dtype=float) + INIT_JITTER * rng.standard_normal(len(q))
        logp, grad = target(q)
    if np.isfinite(logp) and np.all(np.isfinite(grad)):
        return q, logp, grad
    raise SamplerInitializationError(
        f"Target density is not finite at the initial point after {INIT_RETRIES} jittered retries",
        lambda_value=lambda_value)


def sample(target, init, config, progress=False, desc='NUTS', lambda_value=None):
    """Run one NUTS chain with warmup adaptation of step size and diagonal metric.

    `target(q)` returns the log density and its gradient at q.
    """
    rng = np.random.default_rng(config.seed)
    q, logp, grad = _initial_point(target, init, rng, lambda_value)
    dim = len(q)

    inv_metric = np.ones(dim)
    step_size = find_reasonable_step_size(target, q, logp, grad, inv_metric, rng)
    adapter = DualAveraging(prox_center=math.log(10 * step_size))
    variance = WelfordVariance(dim)
    windows = warmup_windows(config.num_warmup)
    window_ends = {end: start for start, end in windows}
    logging.debug(f"Warmup windows: {windows}")

    kept = config.num_kept
    draws = np.empty((kept, dim))
    log_density = np.empty(kept)
    accept_stats = np.empty(config.num_iterations)
    depths = np.empty(config.num_iterations, dtype=int)
    leapfrogs = np.empty(config.num_iterations, dtype=int)
    divergences = 0
    warmup_divergences = 0

    for it in tqdm(range(config.num_iterations), desc=desc, disable=not progress, leave=False):
        q, logp, grad, accept, depth, n_leapfrog, divergent = nuts_transition(
            target, q, logp, grad, step_size, inv_metric, config.max_tree_depth, rng)
        accept_stats[it] = accept
        depths[it] = depth
        leapfrogs[it] = n_leapfrog

        if it < config.num_warmup:
            warmup_divergences += int(divergent)
            adapter.step(config.target_accept - accept)
            step_size = math.exp(adapter.get_state()[0])

            if any(start <= it < end for start, end in windows):
                variance.update(q)
            if it + 1 in window_ends:
                inv_metric = variance.regularized_variance()
                variance.reset()
                step_size = find_reasonable_step_size(target, q, logp, grad, inv_metric, rng, step_size)
                adapter.reset(prox_center=math.log(10 * step_size))
                logging.debug(f"Metric window ending at iteration {it + 1}: step size {step_size:.4g}")

            if it + 1 == config.num_warmup:
                step_size = math.exp(adapter.get_state()[1])
        else:
            divergences += int(divergent)
            draws[it - config.num_warmup] = q
            log_density[it - config.num_warmup] = logp

    if config.num_warmup == 0:
        logging.debug("No warmup requested; using the initial step size")
    if divergences:
        logging.warning(f"{divergences} divergent transitions after warmup")

    return Chain(draws=draws, log_density=log_density, accept_stats=accept_stats,
                 tree_depths=depths, n_leapfrog=leapfrogs, divergence_count=divergences,
                 warmup_divergences=warmup_divergences, step_size=step_size,
                 mass_diag=inv_metric)


def summarize(chain, transform=None, level=0.95):
    """Means and central intervals of the draws after mapping them to the constrained scale.

    `transform` is a callable on the draw matrix or a boolean mask of log-scale coordinates.
    """
    if not 0 < level < 1:
        raise ValueError(f"Interval level must lie in (0, 1), got {level}")
    draws = chain.draws if isinstance(chain, Chain) else np.atleast_2d(chain)
    if transform is None:
        values = draws
    elif callable(transform):
        values = transform(draws)
    else:
        log_scale = np.asarray(transform, dtype=bool)
        values = np.where(log_scale, np.exp(np.where(log_scale, draws, 0.0)), draws)
    tail = (1 - level) / 2
    lower, upper = np.quantile(values, [tail, 1 - tail], axis=0)
    return Summary(means=values.mean(axis=0), lower=lower, upper=upper, level=level)
