import numpy as np
import numpy.testing as npt
import pytest

from data_io import Dataset, write_dataset
from harness import (FailureLedger, FitSettings, ReplicationResult, Scenario, StudyFailureError,
                     StudyResult, aggregate, build_problem, fit_dataset, generate_data, initialize,
                     replication_seeds, run_replication, run_study)
from lambda_select import LambdaConfig
from models import get_model, numeric_jacobian_model
from odesolve import SolveConfig, TrajectoryRmse, solve
from sampler import NutsConfig

FN_THETA = (0.2, 0.2, 3.0)
FN_X0 = (-1.0, 1.0)


def small_settings(**overrides):
    settings = dict(lambda_config=LambdaConfig(lambda0=1.0, lambda_star=10.0, lambda_max=100.0),
                    nuts=NutsConfig(num_iterations=60, num_warmup=30, seed=3), num_basis=12, M=24, K=4,
                    n_grid=201)
    settings.update(overrides)
    return FitSettings(**settings)


def small_scenario(sigma=(0.1, 0.1), times=None, replications=1, **overrides):
    grid = tuple(np.linspace(0.0, 4.0, 21).tolist())
    return Scenario(model_name='fn', theta=FN_THETA, x0=FN_X0, sigma=sigma, times=times or (grid, grid),
                    settings=small_settings(**overrides), replications=replications, seed=11)


def fake_result(replication, theta, per_component):
    per_component = np.asarray(per_component, dtype=float)
    blew_up = bool(np.any(np.isinf(per_component)))
    norm = np.full(2, np.inf) if blew_up else np.array([3.0, 4.0])
    rmse = TrajectoryRmse(per_component=per_component, total=float(np.sqrt(np.sum(per_component ** 2))),
                          blew_up=blew_up, average_norm=norm)
    return ReplicationResult(replication=replication, seed=replication, theta_hat=np.asarray(theta),
                             sigma_hat=np.full(2, 0.1), x0_hat=np.asarray(FN_X0), lambda_hat=10.0,
                             stop_reason='interval-overlap', rmse=rmse, rmse_true_x0=rmse, wall_time=1.0)


def test_noise_free_data_matches_solver():
    scenario = small_scenario(sigma=(0.0, 0.0))
    data = generate_data(scenario, 5)
    truth = solve(get_model('fn'), FN_THETA, FN_X0, scenario.grid, SolveConfig(rel_tol=1e-10, abs_tol=1e-10))

    npt.assert_allclose(data.values, truth, rtol=0, atol=1e-14)
    assert data.domain == (0.0, 4.0)
    assert data.names == ('V', 'R')


def test_noise_scale_and_reproducibility():
    grid = tuple(np.linspace(0.0, 20.0, 401).tolist())
    scenario = small_scenario(sigma=(0.2, 0.05), times=(grid, grid))
    first = generate_data(scenario, 7)
    second = generate_data(scenario, 7)
    noise_free = generate_data(small_scenario(sigma=(0.0, 0.0), times=(grid, grid)), 7)

    npt.assert_array_equal(first.values, second.values)
    residual = first.values - noise_free.values
    assert residual[:, 0].std() == pytest.approx(0.2, rel=0.15)
    assert residual[:, 1].std() == pytest.approx(0.05, rel=0.15)


def test_per_component_schedules_leave_gaps():
    scenario = small_scenario(times=((2.0, 3.0, 5.0), (2.0, 4.0, 5.0)))
    data = generate_data(scenario, 0)

    npt.assert_array_equal(data.times, [0.0, 1.0, 2.0, 3.0])
    assert data.time_offset == 2.0
    assert np.isnan(data.values[2, 0]) and np.isnan(data.values[1, 1])
    assert np.all(np.isfinite(data.values[[0, 3]]))


def test_scenario_dimensions_are_checked():
    with pytest.raises(ValueError):
        small_scenario(sigma=(0.1,))
    with pytest.raises(ValueError):
        Scenario(model_name='fn', theta=(0.2, 0.2), x0=FN_X0, sigma=(0.1, 0.1), times=((0.0, 1.0),) * 2,
                 settings=small_settings())


def test_replication_seeds_are_reproducible_and_distinct():
    seeds = replication_seeds(20240101, 20)
    assert seeds == replication_seeds(20240101, 20)
    assert len(set(seeds)) == 20
    assert seeds[:3] == replication_seeds(20240101, 3)
    assert seeds != replication_seeds(20240102, 20)


def test_build_problem_resolves_auto_sizes():
    data = generate_data(small_scenario(), 0)
    problem = build_problem(get_model('fn'), data, small_settings(M='auto', K='auto', num_basis=20))

    assert problem.basis.num_basis == 20
    assert problem.plan.K == 5
    assert problem.plan.M >= 4
    assert problem.basis.domain == (0.0, 4.0)


def test_initialize_skips_chain_when_theta_is_flat():
    zero = numeric_jacobian_model('zero', lambda x, theta, t=0.0: np.zeros_like(x), dim_state=2,
                                  dim_params=2, poly_degree=1)
    times = np.linspace(0.0, 2.0, 11)
    data = Dataset(times=times, values=np.column_stack([times, -times]), names=('x1', 'x2'))
    problem = build_problem(zero, data, small_settings(num_basis=8, M=10, K=3))

    init = initialize(problem, 1.0, small_settings())
    assert init.flat
    assert init.theta_lower is None
    npt.assert_array_equal(init.theta_mean, [1.0, 1.0])


def test_initialize_estimates_theta():
    data = generate_data(small_scenario(), 1)
    settings = small_settings(theta_init=(0.3, 0.3, 2.0))
    init = initialize(build_problem(get_model('fn'), data, settings), 1.0, settings)

    assert not init.flat
    assert init.theta_mean.shape == (3,)
    assert np.all(init.theta_mean > 0)
    assert np.all(init.theta_lower <= init.theta_upper)
    assert init.state.coeffs.shape == (2, 12)
    npt.assert_allclose(np.exp(init.state.log_sigma), 0.1)


def test_failure_ledger():
    ledger = FailureLedger(max_failure_rate=0.2)
    assert ledger.get_stats() == "No replications attempted"
    for _ in range(4):
        ledger.record_attempt(True)
    error = RuntimeError("chain stuck")
    error.lambda_value = 100.0
    ledger.record_attempt(False, replication=4, seed=99, error=error)

    assert ledger.failure_rate == pytest.approx(0.2)
    ledger.check_health()
    assert ledger.records == [{'replication': 4, 'seed': 99, 'error_type': 'RuntimeError',
                               'message': 'chain stuck', 'lambda': 100.0}]

    ledger.record_attempt(False, replication=5, seed=100, error=ValueError("bad"))
    with pytest.raises(StudyFailureError) as excinfo:
        ledger.check_health()
    assert excinfo.value.failure_rate == pytest.approx(2 / 6)


def test_aggregate_rows():
    scenario = small_scenario()
    results = [fake_result(0, (0.2, 0.2, 3.0), [0.1, 0.2]),
               fake_result(1, (0.3, 0.1, 2.0), [0.3, 0.4]),
               fake_result(2, (0.1, 0.3, 4.0), [0.5, 0.6])]
    parameters, trajectories = aggregate(scenario, results)

    assert [row['parameter'] for row in parameters] == ['a', 'b', 'c']
    c = parameters[2]
    assert c['mean'] == pytest.approx(3.0)
    assert c['rmse'] == pytest.approx(np.sqrt(2 / 3))
    assert c['n_replications'] == 3

    assert [row['component'] for row in trajectories] == ['V', 'R', 'total']
    assert trajectories[0]['median_rmse'] == pytest.approx(0.3)
    assert trajectories[0]['iqr_rmse'] == pytest.approx(0.4)
    assert trajectories[2]['median_rmse'] == pytest.approx(0.5)
    assert trajectories[2]['mean_average_norm'] == pytest.approx(5.0)
    assert all(row['blown_up'] == 0 for row in trajectories)


def test_aggregate_single_replication_has_zero_spread():
    parameters, trajectories = aggregate(small_scenario(), [fake_result(0, (0.25, 0.2, 3.0), [0.1, 0.2])])
    assert parameters[0]['rmse'] == pytest.approx(0.05)
    assert all(row['iqr_rmse'] == 0.0 for row in trajectories)
    assert aggregate(small_scenario(), []) == ([], [])


def test_aggregate_with_blown_up_replication():
    results = [fake_result(0, (0.2, 0.2, 3.0), [0.1, 0.2]),
               fake_result(1, (0.3, 0.1, 2.0), [0.3, 0.4]),
               fake_result(2, (0.1, 0.3, 4.0), [np.inf, np.inf])]
    _, trajectories = aggregate(small_scenario(), results)

    for row in trajectories:
        numbers = [v for v in row.values() if isinstance(v, float)]
        assert not any(np.isnan(v) for v in numbers), row
        assert row['blown_up'] == 1
        assert row['iqr_rmse'] == np.inf
        assert row['iqr_rmse_true_x0'] == np.inf
    assert trajectories[0]['median_rmse'] == pytest.approx(0.3)
    assert trajectories[1]['mean_average_norm'] == pytest.approx(4.0)
    assert trajectories[2]['mean_average_norm'] == pytest.approx(5.0)


def test_study_result_reads_the_ledger():
    ledger = FailureLedger()
    ledger.record_attempt(True)
    ledger.record_attempt(False, replication=1, seed=5, error=RuntimeError("stuck"))
    study = StudyResult(scenario=small_scenario(), replications=[], ledger=ledger)

    assert study.failure_rate == pytest.approx(0.5)
    assert study.failures[0]['replication'] == 1
    with pytest.raises(StudyFailureError):
        study.ledger.check_health()


def test_run_replication_end_to_end():
    scenario = small_scenario()
    result = run_replication(scenario, 0, replication_seeds(scenario.seed, 1)[0])

    assert result.theta_hat.shape == (3,)
    assert result.lambda_hat in (1.0, 10.0, 100.0)
    assert result.stop_reason in ('interval-overlap', 'err-increase', 'cap-reached')
    assert result.rmse.per_component.shape == (2,)
    assert result.rmse_true_x0.total >= 0
    assert np.isfinite(result.err_lambda0) and np.isfinite(result.err_selected)
    if result.lambda_hat == 1.0:
        assert result.err_selected == result.err_lambda0


def test_run_study_collects_every_replication():
    scenario = small_scenario(replications=2)
    study = run_study(scenario, threads=1)

    assert len(study.replications) + len(study.failures) == 2
    assert 0.0 <= study.failure_rate <= 1.0
    if study.replications:
        assert len(study.parameters) == 3
        assert len(study.trajectories) == 3


def test_fit_dataset_bands_use_absolute_times(tmp_path):
    grid = tuple(np.linspace(10.0, 14.0, 21).tolist())
    data = generate_data(small_scenario(times=(grid, grid)), 2)
    path = str(tmp_path / 'obs.csv')
    write_dataset(path, data)

    result = fit_dataset(path, get_model('fn'), small_settings(n_grid=101))
    assert result.dataset.time_offset == 10.0
    assert len(result.bands) == 2 * 101
    assert result.bands[0]['time'] == pytest.approx(10.0)
    assert result.bands[100]['time'] == pytest.approx(14.0)
    assert all(row['lower'] <= row['upper'] for row in result.bands)


def test_fit_dataset_rejects_component_mismatch(tmp_path):
    path = tmp_path / 'obs.csv'
    path.write_text("time,x\n0,1\n1,2\n2,3\n", encoding='utf-8')
    with pytest.raises(ValueError):
        fit_dataset(str(path), get_model('fn'), small_settings())
