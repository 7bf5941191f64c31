LAMBDA_TRACE_FIELDS = [
    'step',
    'lambda',
    'err',
    'selected',
    'mean_accept',
    'divergences',
    'step_size',
    'wall_time',
]

PARAMETER_FIELDS = [
    'parameter',
    'mean',
    'lower',
    'upper',
    'level',
]

BAND_FIELDS = [
    'time',
    'component',
    'mean',
    'lower',
    'upper',
]

STUDY_PARAMETER_FIELDS = [
    'parameter',
    'true_value',
    'mean',
    'rmse',
    'n_replications',
]

STUDY_TRAJECTORY_FIELDS = [
    'component',
    'median_rmse',
    'iqr_rmse',
    'median_rmse_true_x0',
    'iqr_rmse_true_x0',
    'mean_average_norm',
    'blown_up',
    'n_replications',
]

REPLICATION_FIELDS = [
    'replication',
    'seed',
    'lambda_hat',
    'stop_reason',
    'blew_up',
    'err_lambda0',
    'err_selected',
    'wall_time',
]

FAILURE_FIELDS = [
    'replication',
    'seed',
    'error_type',
    'message',
    'lambda',
]

SIMULATION_MANIFEST_FIELDS = [
    'replication',
    'seed',
    'file',
]

TABLES = {
    'lambda_trace': LAMBDA_TRACE_FIELDS,
    'parameters': PARAMETER_FIELDS,
    'bands': BAND_FIELDS,
    'study_parameters': STUDY_PARAMETER_FIELDS,
    'study_trajectories': STUDY_TRAJECTORY_FIELDS,
    'replications': REPLICATION_FIELDS,
    'failures': FAILURE_FIELDS,
    'simulation': SIMULATION_MANIFEST_FIELDS,
}


def get_output_fields_for_table(table, model=None):
    """Column list of an output table; model-dependent tables gain per-parameter/component columns."""
    if table not in TABLES:
        raise ValueError(f"Unknown output table: {table}")
    fields = list(TABLES[table])
    if model is None:
        return fields

    if table == 'lambda_trace':
        for name in model.param_names:
            fields += [f'theta_{name}_mean', f'theta_{name}_lower', f'theta_{name}_upper',
                       f'overlap_{name}']
        fields += [f'sigma_{name}_mean' for name in model.state_names]
    elif table == 'replications':
        fields += [f'theta_{name}' for name in model.param_names]
        fields += [f'sigma_{name}' for name in model.state_names]
        fields += [f'rmse_{name}' for name in model.state_names] + ['rmse_total']
        fields += [f'rmse_true_x0_{name}' for name in model.state_names] + ['rmse_true_x0_total']
        fields += [f'average_norm_{name}' for name in model.state_names]
    return fields
