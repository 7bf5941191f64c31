import numpy as np
import numpy.testing as npt
import pytest

from sampler import (NutsConfig, SamplerInitializationError, hamiltonian, leapfrog, sample,
                     summarize, warmup_windows)


def standard_normal(q):
    return -0.5 * float(q @ q), -q


def correlated_normal(rho):
    precision = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))

    def target(q):
        return -0.5 * float(q @ precision @ q), -precision @ q
    return target


def test_standard_normal_moments():
    config = NutsConfig(num_iterations=3500, num_warmup=500, seed=11)
    chain = sample(standard_normal, np.zeros(10), config)

    assert chain.draws.shape == (3000, 10)
    assert np.max(np.abs(chain.draws.mean(axis=0))) < 0.15
    assert np.max(np.abs(chain.draws.var(axis=0) - 1.0)) < 0.2
    assert chain.divergence_count == 0


def test_adapted_acceptance_near_target():
    config = NutsConfig(num_iterations=1500, num_warmup=500, target_accept=0.8, seed=3)
    chain = sample(standard_normal, np.zeros(5), config)
    assert 0.6 < chain.accept_stats[config.num_warmup:].mean() < 0.95


def test_correlated_gaussian_covariance():
    config = NutsConfig(num_iterations=3000, num_warmup=500, seed=5)
    chain = sample(correlated_normal(0.9), np.zeros(2), config)

    assert np.max(np.abs(chain.draws.mean(axis=0))) < 0.2
    assert np.corrcoef(chain.draws.T)[0, 1] == pytest.approx(0.9, abs=0.05)
    npt.assert_allclose(chain.draws.var(axis=0), 1.0, atol=0.25)


def test_max_tree_depth_one_takes_single_steps():
    config = NutsConfig(num_iterations=200, num_warmup=100, max_tree_depth=1, seed=2)
    chain = sample(standard_normal, np.zeros(3), config)

    assert np.all(chain.tree_depths <= 1)
    assert np.all(chain.n_leapfrog == 1)
    assert len(chain.accept_stats) == 200


def test_same_seed_gives_identical_chain():
    config = NutsConfig(num_iterations=150, num_warmup=50, seed=42)
    first = sample(standard_normal, np.ones(4), config)
    second = sample(standard_normal, np.ones(4), config)
    other = sample(standard_normal, np.ones(4), config.with_seed(43))

    npt.assert_array_equal(first.draws, second.draws)
    assert first.step_size == second.step_size
    assert not np.array_equal(first.draws, other.draws)


def test_support_boundary_is_respected():
    def half_normal(q):
        if q[0] < 0:
            return -np.inf, np.zeros_like(q)
        return -0.5 * float(q @ q), -q

    config = NutsConfig(num_iterations=800, num_warmup=200, seed=9)
    chain = sample(half_normal, np.array([1.0]), config)
    assert np.all(chain.draws >= 0)
    assert chain.draws.mean() == pytest.approx(np.sqrt(2 / np.pi), abs=0.15)


def test_leapfrog_energy_error_is_second_order():
    q0 = np.array([1.0])
    p0 = np.array([0.5])
    inv_metric = np.ones(1)
    H0 = hamiltonian(standard_normal(q0)[0], p0, inv_metric)

    errors = []
    for step_size in (0.1, 0.05):
        q, p, grad = q0, p0, standard_normal(q0)[1]
        for _ in range(int(round(1.0 / step_size))):
            q, p, logp, grad = leapfrog(standard_normal, q, p, grad, step_size, inv_metric)
        errors.append(abs(hamiltonian(logp, p, inv_metric) - H0))

    assert 3.5 < errors[0] / errors[1] < 4.5


def test_initialization_failure_carries_lambda():
    def nowhere(q):
        return -np.inf, np.zeros_like(q)

    config = NutsConfig(num_iterations=10, num_warmup=5)
    with pytest.raises(SamplerInitializationError) as excinfo:
        sample(nowhere, np.zeros(2), config, lambda_value=100.0)
    assert excinfo.value.lambda_value == 100.0


def test_jittered_retry_escapes_bad_start():
    def shifted(q):
        if np.all(q == 0):
            return np.nan, np.zeros_like(q)
        return standard_normal(q)

    config = NutsConfig(num_iterations=60, num_warmup=30, seed=1)
    chain = sample(shifted, np.zeros(2), config)
    assert np.all(np.isfinite(chain.draws))


@pytest.mark.parametrize("kwargs", [
    {'num_iterations': 100, 'num_warmup': 100},
    {'target_accept': 1.0},
    {'max_tree_depth': 0},
])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        NutsConfig(**kwargs)


def test_warmup_windows_layout():
    assert warmup_windows(200) == [(30, 55), (55, 180)]
    assert warmup_windows(10) == []

    windows = warmup_windows(1000)
    assert windows[0][0] == 150
    assert windows[-1][1] == 900
    assert all(a[1] == b[0] for a, b in zip(windows, windows[1:]))


def test_summarize_quantiles_and_log_scale():
    draws = np.arange(101, dtype=float)[:, None]
    summary = summarize(draws, level=0.9)

    assert summary.means[0] == pytest.approx(50.0)
    assert summary.lower[0] == pytest.approx(5.0)
    assert summary.upper[0] == pytest.approx(95.0)
    assert summary.level == 0.9

    logged = summarize(np.log(np.array([[1.0, 1.0], [4.0, 1.0]])), transform=np.array([True, False]))
    assert logged.means[0] == pytest.approx(2.5)
    assert logged.means[1] == pytest.approx(0.0)


def test_summarize_rejects_bad_level():
    with pytest.raises(ValueError):
        summarize(np.zeros((3, 1)), level=1.0)
