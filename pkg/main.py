import os
import sys
import time
import json
import logging
import argparse
import traceback
from datetime import datetime

import numpy as np

from config import PACKAGE_VERSION, ConfigLoader, ConfigurationError, config_hash
from data_io import DataFormatError, DomainMismatchError, to_serializable, write_dataset, write_json, write_table
from diagnostics import run_property_suite
from harness import fit_dataset, generate_data, replication_seeds, run_study
from models import UnknownModelError
from output_fields import get_output_fields_for_table
from posterior import PRIOR_KINDS

DATA_ERRORS = (ConfigurationError, DataFormatError, DomainMismatchError, UnknownModelError, FileNotFoundError)


def setup_logging(log_level, log_dir='.'):
    level = getattr(logging, log_level.upper(), logging.INFO)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f"collocation_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
    file_handler = logging.FileHandler(log_file)
    file_handler.setFormatter(formatter)
    file_handler.setLevel(level)
    logging.getLogger().addHandler(file_handler)

    logging.info(f"Logging initialized at {log_level} level. Log file: {log_file}")


def parse_arguments(argv=None):
    parser = argparse.ArgumentParser(
        description="Bayesian integral collocation for ODE parameter inference",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""Example usage:
  python main.py simulate --config samples/sample_config/fn41.yaml --out data/fn41
  python main.py fit --config samples/sample_config/lv_hare_lynx.yaml --data hare_lynx.csv
  python main.py study --config samples/sample_config/fn21.yaml --prior derivative --threads 4
  python main.py check
"""
    )
    parser.add_argument('command', choices=['simulate', 'fit', 'study', 'check'],
                        help='Subcommand to run')
    parser.add_argument('-c', '--config', help='Path to the YAML configuration file or a run manifest')
    parser.add_argument('--data', help='Observation CSV (overrides data.path)')
    parser.add_argument('--out', help='Output directory (overrides output.directory)')
    parser.add_argument('--prior', choices=PRIOR_KINDS, help='Prior on the spline coefficients')
    parser.add_argument('--seed', type=int, help='Random seed (overrides nuts.seed and simulation.seed)')
    parser.add_argument('--threads', type=int, help='Parallel replications (default: all cores)')
    parser.add_argument('-v', '--verbose', action='store_true', help='Enable verbose (DEBUG) logging')
    return parser.parse_args(argv)


def print_summary(title, rows):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    for label, value in rows:
        print(f"{label}: {value}")
    print("=" * 60 + "\n")


def write_manifest(out_dir, command, config, seed):
    manifest = {
        'command': command,
        'version': PACKAGE_VERSION,
        'created_at': datetime.now().isoformat(timespec='seconds'),
        'seed': seed,
        'config_hash': config_hash(config.config) if config is not None else None,
        'config': config.config if config is not None else None,
    }
    write_json(os.path.join(out_dir, 'manifest.json'), manifest)


def write_diagnostics(out_dir, error):
    document = {
        'error_type': type(error).__name__,
        'message': str(error),
        'lambda': getattr(error, 'lambda_value', None),
        'traceback': traceback.format_exception(type(error), error, error.__traceback__),
    }
    path = os.path.join(out_dir, 'diagnostics.json')
    os.makedirs(out_dir, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_serializable(document), f, indent=2)
    return path


def _interval_columns(prefix, names, summary):
    record = {}
    for k, name in enumerate(names):
        record[f'{prefix}_{name}_mean'] = summary[0][k]
        record[f'{prefix}_{name}_lower'] = None if summary[1] is None else summary[1][k]
        record[f'{prefix}_{name}_upper'] = None if summary[2] is None else summary[2][k]
    return record


def lambda_trace_records(trace, model):
    records = []
    for step in trace.steps:
        record = {
            'step': step.step,
            'lambda': step.lam,
            'err': step.err,
            'selected': int(step.lam == trace.selected),
            'mean_accept': step.mean_accept,
            'divergences': step.divergences,
            'step_size': step.step_size,
            'wall_time': step.wall_time,
        }
        record.update(_interval_columns('theta', model.param_names,
                                        (step.theta_mean, step.theta_lower, step.theta_upper)))
        for k, name in enumerate(model.param_names):
            record[f'overlap_{name}'] = None if step.overlap is None else step.overlap[k]
        for i, name in enumerate(model.state_names):
            record[f'sigma_{name}_mean'] = step.sigma_mean[i]
        records.append(record)
    return records


def parameter_records(fit, model, level):
    records = []
    groups = [('theta', model.param_names, fit.theta), ('sigma', model.state_names, fit.sigma),
              ('x0', model.state_names, fit.x0)]
    for prefix, names, summary in groups:
        for k, name in enumerate(names):
            records.append({'parameter': f'{prefix}_{name}' if prefix != 'theta' else name,
                            'mean': summary.means[k], 'lower': summary.lower[k],
                            'upper': summary.upper[k], 'level': level})
    return records


def fit_document(result, model, config):
    fit, trace, chain = result.fit, result.trace, result.fit.chain
    nuts = config.get_nuts_config()
    kept = slice(nuts.num_warmup, None)
    return {
        'model': model.name,
        'prior': config.get_prior_kind(),
        'config_hash': config_hash(config.config),
        'time_offset': result.dataset.time_offset,
        'lambda_selected': trace.selected,
        'stop_reason': trace.stop_reason,
        'parameters': parameter_records(fit, model, config.get_evaluation()['level']),
        'initial_theta': result.init.theta_mean,
        'flat_initial_target': result.init.flat,
        'lambda_trace': [
            {'lambda': s.lam, 'err': s.err, 'theta_mean': s.theta_mean, 'theta_lower': s.theta_lower,
             'theta_upper': s.theta_upper, 'sigma_mean': s.sigma_mean, 'overlap': s.overlap,
             'mean_accept': s.mean_accept, 'divergences': s.divergences, 'step_size': s.step_size}
            for s in trace.steps
        ],
        'sampler': {
            'mean_accept': float(np.mean(chain.accept_stats[kept])),
            'divergences': chain.divergence_count,
            'step_size': chain.step_size,
            'mean_tree_depth': float(np.mean(chain.tree_depths[kept])),
            'mean_leapfrog_steps': float(np.mean(chain.n_leapfrog[kept])),
        },
    }


def cmd_simulate(config, out_dir):
    scenario = config.get_scenario()
    seeds = replication_seeds(scenario.seed, scenario.replications)
    records = []
    for r in range(scenario.replications):
        dataset = generate_data(scenario, seeds[r][0])
        file_name = f"rep_{r:03d}.csv"
        write_dataset(os.path.join(out_dir, file_name), dataset)
        records.append({'replication': r, 'seed': seeds[r][0], 'file': file_name})
    write_table(os.path.join(out_dir, 'simulation.csv'), get_output_fields_for_table('simulation'), records)
    write_manifest(out_dir, 'simulate', config, scenario.seed)
    print_summary("SIMULATION SUMMARY", [
        ("Model", scenario.model_name),
        ("Replications written", scenario.replications),
        ("Observation times", len(scenario.grid)),
        ("Output directory", out_dir),
    ])
    return 0


def cmd_fit(config, out_dir):
    model = config.model
    result = fit_dataset(config.get_data_path(), model, config.get_fit_settings(), config.get_data_domain())
    write_manifest(out_dir, 'fit', config, config.get_nuts_config().seed)

    write_json(os.path.join(out_dir, 'fit.json'), fit_document(result, model, config))
    write_table(os.path.join(out_dir, 'lambda_trace.csv'),
                get_output_fields_for_table('lambda_trace', model), lambda_trace_records(result.trace, model))
    write_table(os.path.join(out_dir, 'parameters.csv'), get_output_fields_for_table('parameters'),
                parameter_records(result.fit, model, config.get_evaluation()['level']))
    write_table(os.path.join(out_dir, 'trajectory_bands.csv'), get_output_fields_for_table('bands'),
                result.bands)

    rows = [("Model", model.name), ("Prior", config.get_prior_kind()),
            ("Selected lambda", f"{result.trace.selected:g} ({result.trace.stop_reason})")]
    for k, name in enumerate(model.param_names):
        fit = result.fit.theta
        rows.append((f"{name}", f"{fit.means[k]:.4f} ({fit.lower[k]:.4f}, {fit.upper[k]:.4f})"))
    for i, name in enumerate(model.state_names):
        rows.append((f"x0[{name}]", f"{result.fit.x0.means[i]:.4f}"))
    rows.append(("Divergences after warmup", result.fit.chain.divergence_count))
    print_summary("FIT SUMMARY", rows)
    return 0


def replication_records(result, model):
    records = []
    for r in result.replications:
        record = {
            'replication': r.replication,
            'seed': r.seed,
            'lambda_hat': r.lambda_hat,
            'stop_reason': r.stop_reason,
            'blew_up': int(r.rmse.blew_up),
            'err_lambda0': r.err_lambda0,
            'err_selected': r.err_selected,
            'wall_time': r.wall_time,
            'rmse_total': r.rmse.total,
            'rmse_true_x0_total': r.rmse_true_x0.total,
        }
        for k, name in enumerate(model.param_names):
            record[f'theta_{name}'] = r.theta_hat[k]
        for i, name in enumerate(model.state_names):
            record[f'sigma_{name}'] = r.sigma_hat[i]
            record[f'rmse_{name}'] = r.rmse.per_component[i]
            record[f'rmse_true_x0_{name}'] = r.rmse_true_x0.per_component[i]
            record[f'average_norm_{name}'] = r.rmse.average_norm[i]
        records.append(record)
    return records


def cmd_study(config, out_dir):
    scenario = config.get_scenario()
    model = config.model
    write_manifest(out_dir, 'study', config, scenario.seed)
    start_time = time.time()
    result = run_study(scenario, config.get_threads())

    replications = replication_records(result, model)
    write_table(os.path.join(out_dir, 'study_parameters.csv'),
                get_output_fields_for_table('study_parameters'), result.parameters)
    write_table(os.path.join(out_dir, 'study_trajectories.csv'),
                get_output_fields_for_table('study_trajectories'), result.trajectories)
    write_table(os.path.join(out_dir, 'replications.csv'),
                get_output_fields_for_table('replications', model), replications)
    write_table(os.path.join(out_dir, 'failures.csv'), get_output_fields_for_table('failures'),
                result.failures)
    write_json(os.path.join(out_dir, 'study.json'), {
        'model': model.name,
        'prior': scenario.settings.prior_kind,
        'config_hash': config_hash(config.config),
        'replications_requested': scenario.replications,
        'replications_succeeded': len(result.replications),
        'failure_rate': result.failure_rate,
        'parameters': result.parameters,
        'trajectories': result.trajectories,
        'replications': replications,
        'failures': result.failures,
    })

    rows = [("Model", model.name), ("Prior", scenario.settings.prior_kind),
            ("Replications", f"{len(result.replications)}/{scenario.replications} succeeded")]
    for row in result.parameters:
        rows.append((row['parameter'], f"{row['mean']:.3f} (RMSE {row['rmse']:.3f}, true {row['true_value']:g})"))
    for row in result.trajectories:
        rows.append((f"trajectory RMSE {row['component']}",
                     f"{row['median_rmse']:.3f} (IQR {row['iqr_rmse']:.3f})"))
    rows.append(("Processing time", f"{time.time() - start_time:.2f} seconds"))
    print_summary("STUDY SUMMARY", rows)

    result.ledger.check_health()
    return 0


def cmd_check(seed, out_dir, config=None):
    write_manifest(out_dir, 'check', config, seed)
    results = run_property_suite(seed)
    write_json(os.path.join(out_dir, 'check.json'), [r._asdict() for r in results])
    rows = [(r.name, f"{'PASS' if r.passed else 'FAIL'} ({r.value:.3g} vs {r.threshold:.3g})") for r in results]
    print_summary("PROPERTY SUITE", rows)
    return 0 if all(r.passed for r in results) else 3


def main(argv=None):
    args = parse_arguments(argv)
    out_dir = args.out or 'results'

    try:
        config = None
        if args.command != 'check' or args.config:
            if not args.config:
                raise ConfigurationError(f"The {args.command} command requires --config")
            print(f"Loading configuration from: {args.config}")
            config = ConfigLoader(args.config)
            config.apply_overrides(prior=args.prior, seed=args.seed, threads=args.threads,
                                   output=args.out, data=args.data)
            out_dir = config.get_output_directory()

        log_level = 'DEBUG' if args.verbose else (config.get_log_level() if config else 'INFO')
        setup_logging(log_level, out_dir)

        if args.command == 'check':
            seed = args.seed if args.seed is not None else 0
            return cmd_check(seed, out_dir, config)

        logging.info(f"Model: {config.get_model_name()} (prior: {config.get_prior_kind()})")
        logging.info(f"Output directory: {out_dir}")
        if args.command == 'simulate':
            return cmd_simulate(config, out_dir)
        if args.command == 'fit':
            return cmd_fit(config, out_dir)
        return cmd_study(config, out_dir)

    except DATA_ERRORS as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2

    except KeyboardInterrupt:
        print("\nProcessing interrupted by user")
        return 130

    except Exception as e:
        print(f"Run failed: {type(e).__name__}: {e}", file=sys.stderr)
        logging.error("Run failed", exc_info=True)
        path = write_diagnostics(out_dir, e)
        print(f"Diagnostics written to: {path}", file=sys.stderr)
        return 3


if __name__ == '__main__':
    sys.exit(main())
