import json
from pathlib import Path

import pandas as pd
import pytest

from evaluate_study import (check_targets, compare_methods, load_replications, load_tables, load_targets,
                            main)

TARGETS = Path(__file__).resolve().parent.parent / 'samples' / 'sample_targets' / 'fn_targets.yaml'


def write_tables(directory, c_mean=2.9, c_rmse=0.2, v_rmse=0.15, r_rmse=0.05, total=0.16):
    directory.mkdir(parents=True, exist_ok=True)
    parameters = pd.DataFrame({
        'parameter': ['a', 'b', 'c'],
        'true_value': [0.2, 0.2, 3.0],
        'mean': [0.2, 0.21, c_mean],
        'rmse': [0.02, 0.05, c_rmse],
        'n_replications': [20, 20, 20],
    })
    trajectories = pd.DataFrame({
        'component': ['V', 'R', 'total'],
        'median_rmse': [v_rmse, r_rmse, total],
        'iqr_rmse': [0.05, 0.02, 0.05],
        'median_rmse_true_x0': [v_rmse, r_rmse, total],
        'iqr_rmse_true_x0': [0.05, 0.02, 0.05],
        'mean_average_norm': [6.0, 3.0, 6.7],
        'blown_up': [0, 0, 0],
        'n_replications': [20, 20, 20],
    })
    parameter_file = directory / 'study_parameters.csv'
    trajectory_file = directory / 'study_trajectories.csv'
    parameters.to_csv(parameter_file, index=False)
    trajectories.to_csv(trajectory_file, index=False)
    return str(parameter_file), str(trajectory_file)


def write_replications(directory, capped=2, improvement=0.6):
    directory.mkdir(parents=True, exist_ok=True)
    stops = ['cap-reached'] * capped + ['interval-overlap'] * (20 - capped)
    replications = pd.DataFrame({
        'replication': range(20),
        'seed': range(100, 120),
        'lambda_hat': [1000.0] * 20,
        'stop_reason': stops,
        'blew_up': [False] * 20,
        'err_lambda0': [0.05] * 20,
        'err_selected': [0.05 * improvement] * 20,
        'wall_time': [1.0] * 20,
    })
    path = directory / 'replications.csv'
    replications.to_csv(path, index=False)
    return str(path)


def test_fn41_targets_pass(tmp_path):
    parameters, trajectories = load_tables(*write_tables(tmp_path))
    outcomes = check_targets(parameters, trajectories, load_targets(str(TARGETS), 'fn41'))

    assert len(outcomes) == 4
    assert all(o['passed'] for o in outcomes)


def test_out_of_band_mean_fails(tmp_path):
    parameters, trajectories = load_tables(*write_tables(tmp_path, c_mean=2.5))
    outcomes = check_targets(parameters, trajectories, load_targets(str(TARGETS), 'fn41'))

    failed = [o['name'] for o in outcomes if not o['passed']]
    assert failed == ['mean of c']


def test_ratio_target(tmp_path):
    parameters, trajectories = load_tables(*write_tables(tmp_path, c_rmse=0.8))
    outcomes = check_targets(parameters, trajectories, load_targets(str(TARGETS), 'fn11'))

    assert outcomes[0]['observed'] == pytest.approx(3.0)
    assert all(o['passed'] for o in outcomes)


def test_missing_section_and_row(tmp_path):
    with pytest.raises(ValueError):
        load_targets(str(TARGETS), 'lv')
    parameters, trajectories = load_tables(*write_tables(tmp_path))
    with pytest.raises(ValueError):
        check_targets(parameters, trajectories, [{'table': 'parameters', 'row': 'd', 'column': 'mean'}])


def test_missing_columns(tmp_path):
    parameter_file, trajectory_file = write_tables(tmp_path)
    pd.read_csv(parameter_file).drop(columns=['rmse']).to_csv(parameter_file, index=False)
    with pytest.raises(ValueError):
        load_tables(parameter_file, trajectory_file)


def test_compare_methods(tmp_path):
    _, integral = load_tables(*write_tables(tmp_path / 'integral', total=0.1))
    _, derivative = load_tables(*write_tables(tmp_path / 'derivative', total=0.5))

    assert compare_methods(integral, derivative, factor=2.0)['passed']
    assert not compare_methods(integral, derivative, factor=10.0)['passed']
    assert not compare_methods(derivative, integral)['passed']


def test_main_exit_codes(tmp_path):
    parameter_file, trajectory_file = write_tables(tmp_path / 'good')
    report = tmp_path / 'report.json'
    assert main(['-p', parameter_file, '-t', trajectory_file, '--targets', str(TARGETS),
                 '--section', 'fn41', '--output', str(report)]) == 0
    assert json.loads(report.read_text())['targets'][0]['passed']

    bad_parameters, bad_trajectories = write_tables(tmp_path / 'bad', c_rmse=0.4)
    assert main(['-p', bad_parameters, '-t', bad_trajectories, '--targets', str(TARGETS),
                 '--section', 'fn41']) == 1
    assert main(['-p', str(tmp_path / 'absent.csv'), '-t', trajectory_file]) == 1


def test_low_noise_replication_targets(tmp_path):
    parameters, trajectories = load_tables(*write_tables(tmp_path))
    targets = load_targets(str(TARGETS), 'fn41_low_noise')

    outcomes = check_targets(parameters, trajectories, targets, load_replications(write_replications(tmp_path)))
    assert [o['observed'] for o in outcomes] == [2.0, pytest.approx(0.6)]
    assert all(o['passed'] for o in outcomes)

    capped = load_replications(write_replications(tmp_path / 'capped', capped=6))
    assert [o['passed'] for o in check_targets(parameters, trajectories, targets, capped)] == [False, True]


def test_unchanged_discrepancy_fails_strict_bound(tmp_path):
    parameters, trajectories = load_tables(*write_tables(tmp_path))
    replications = load_replications(write_replications(tmp_path, improvement=1.0))
    outcomes = check_targets(parameters, trajectories, load_targets(str(TARGETS), 'fn41_low_noise'), replications)

    assert outcomes[1]['observed'] == 1.0
    assert not outcomes[1]['passed']


def test_replication_targets_need_the_table(tmp_path):
    parameters, trajectories = load_tables(*write_tables(tmp_path))
    with pytest.raises(ValueError):
        check_targets(parameters, trajectories, load_targets(str(TARGETS), 'fn41_low_noise'))

    path = write_replications(tmp_path / 'partial')
    pd.read_csv(path).drop(columns=['err_lambda0']).to_csv(path, index=False)
    with pytest.raises(ValueError):
        load_replications(path)


def test_main_with_replications(tmp_path):
    parameter_file, trajectory_file = write_tables(tmp_path)
    replication_file = write_replications(tmp_path)
    assert main(['-p', parameter_file, '-t', trajectory_file, '-r', replication_file,
                 '--targets', str(TARGETS), '--section', 'fn41_low_noise']) == 0
    assert main(['-p', parameter_file, '-t', trajectory_file,
                 '--targets', str(TARGETS), '--section', 'fn41_low_noise']) == 1
