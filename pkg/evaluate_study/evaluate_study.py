import sys
import json
import argparse
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

PARAMETER_COLUMNS = ['parameter', 'true_value', 'mean', 'rmse', 'n_replications']
TRAJECTORY_COLUMNS = ['component', 'median_rmse', 'iqr_rmse', 'median_rmse_true_x0',
                      'iqr_rmse_true_x0', 'mean_average_norm', 'blown_up', 'n_replications']
REPLICATION_COLUMNS = ['replication', 'stop_reason', 'err_lambda0', 'err_selected']


def load_tables(parameter_file, trajectory_file):
    print("Loading study tables...")

    parameters = pd.read_csv(parameter_file, dtype={'parameter': str})
    print(f"Loaded parameters: {len(parameters)} rows")

    trajectories = pd.read_csv(trajectory_file, dtype={'component': str})
    print(f"Loaded trajectories: {len(trajectories)} rows")

    for name, frame, columns in (('parameter', parameters, PARAMETER_COLUMNS),
                                 ('trajectory', trajectories, TRAJECTORY_COLUMNS)):
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise ValueError(f"Columns {missing} not found in {name} table")

    return parameters.set_index('parameter'), trajectories.set_index('component')


def load_replications(replication_file):
    replications = pd.read_csv(replication_file, dtype={'stop_reason': str})
    print(f"Loaded replications: {len(replications)} rows")
    missing = [c for c in REPLICATION_COLUMNS if c not in replications.columns]
    if missing:
        raise ValueError(f"Columns {missing} not found in replication table")
    return replications


def load_targets(targets_file, section=None):
    with open(targets_file, 'r') as f:
        document = yaml.safe_load(f) or {}
    if section is not None:
        if section not in document:
            raise ValueError(f"Target section '{section}' not found in {targets_file}")
        document = document[section]
    targets = document.get('targets', [])
    if not targets:
        raise ValueError(f"No targets found in {targets_file}")
    return targets


def _replication_statistic(replications, target):
    """Count or summary over the per-replication rows; `ratio_to` divides row by row."""
    if replications is None:
        raise ValueError(f"Target '{target.get('name')}' needs the replication table (--replications)")
    column = target['column']
    statistic = target.get('statistic', 'median')
    if statistic == 'count':
        return float((replications[column].astype(str) == str(target['equals'])).sum())
    values = replications[column].astype(float)
    if 'ratio_to' in target:
        values = values / replications[target['ratio_to']].astype(float)
    values = values[np.isfinite(values)]
    if values.empty:
        return float('nan')
    if statistic == 'median':
        return float(values.median())
    if statistic == 'mean':
        return float(values.mean())
    raise ValueError(f"Unknown statistic '{statistic}'")


def _lookup(tables, target):
    if target['table'] == 'replications':
        return _replication_statistic(tables.get('replications'), target)
    table = tables[target['table']]
    row, column = str(target['row']), target['column']
    if row not in table.index:
        raise ValueError(f"Row '{row}' not found in the {target['table']} table")
    value = float(table.loc[row, column])
    if 'ratio_to' in target:
        value /= float(table.loc[str(target['ratio_to']), column])
    return value


def check_targets(parameters, trajectories, targets, replications=None):
    tables = {'parameters': parameters, 'trajectories': trajectories, 'replications': replications}
    outcomes = []
    for target in targets:
        observed = _lookup(tables, target)
        low = target.get('min', -np.inf)
        high = target.get('max', np.inf)
        if target.get('strict', False):
            passed = bool(low < observed < high)
        else:
            passed = bool(low <= observed <= high)
        outcomes.append({
            'name': target.get('name', f"{target.get('row', target['table'])} {target['column']}"),
            'observed': observed,
            'bound': [low, high],
            'strict': bool(target.get('strict', False)),
            'passed': passed,
        })
    return outcomes


def compare_methods(trajectories_a, trajectories_b, factor=2.0, component='total', column='median_rmse'):
    """Checks that method A's error is below method B's error divided by `factor`."""
    a = float(trajectories_a.loc[component, column])
    b = float(trajectories_b.loc[component, column])
    return {
        'component': component,
        'column': column,
        'method_a': a,
        'method_b': b,
        'ratio': b / a if a > 0 else float('inf'),
        'factor': factor,
        'passed': bool(a < b and a * factor < b),
    }


def generate_report(outcomes, comparison, parameter_file, trajectory_file, output_file=None):
    print("\n" + "=" * 60)
    print("STUDY EVALUATION REPORT")
    print("=" * 60)
    print(f"Parameters:   {parameter_file}")
    print(f"Trajectories: {trajectory_file}")

    if outcomes:
        print("\n1. TARGETS:")
        for outcome in outcomes:
            low, high = outcome['bound']
            status = 'PASS' if outcome['passed'] else 'FAIL'
            band = f"({low}, {high})" if outcome.get('strict') else f"[{low}, {high}]"
            print(f"   {outcome['name']:<40} {outcome['observed']:>10.4f}  in {band}  {status}")

    if comparison:
        print("\n2. METHOD COMPARISON:")
        print(f"   {comparison['column']} ({comparison['component']}): "
              f"{comparison['method_a']:.4f} vs {comparison['method_b']:.4f} "
              f"(ratio {comparison['ratio']:.2f}, required > {comparison['factor']})  "
              f"{'PASS' if comparison['passed'] else 'FAIL'}")

    if output_file:
        report_data = {
            'configuration': {
                'parameter_file': parameter_file,
                'trajectory_file': trajectory_file,
            },
            'targets': outcomes,
            'comparison': comparison,
        }
        with open(output_file, 'w') as f:
            json.dump(report_data, f, indent=2)
        print(f"\nDETAILED REPORT SAVED TO: {output_file}")

    print("\n" + "=" * 60)


def main(argv=None):
    parser = argparse.ArgumentParser(
        description='Check replicated-study tables against target bands.',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  # Check FN-41 aggregates against their target bands
  python evaluate_study.py -p out/study_parameters.csv -t out/study_trajectories.csv \\
      --targets ../samples/sample_targets/fn_targets.yaml --section fn41

  # Low-noise run: cap-reached stops and discrepancy at the selected lambda
  python evaluate_study.py -p out/study_parameters.csv -t out/study_trajectories.csv \\
      -r out/replications.csv --targets ../samples/sample_targets/fn_targets.yaml --section fn41_low_noise

  # Integral prior must beat the derivative prior by a factor of 2
  python evaluate_study.py -p integral/study_parameters.csv -t integral/study_trajectories.csv \\
      --compare derivative/study_trajectories.csv --factor 2
        '''
    )
    parser.add_argument('-p', '--parameters', required=True, help='study_parameters.csv')
    parser.add_argument('-t', '--trajectories', required=True, help='study_trajectories.csv')
    parser.add_argument('-r', '--replications', help='replications.csv, needed by replication targets')
    parser.add_argument('--targets', help='YAML file with target bands')
    parser.add_argument('--section', help='Section of the targets file to use')
    parser.add_argument('--compare', help='study_trajectories.csv of a second method')
    parser.add_argument('--factor', type=float, default=2.0,
                        help='Required ratio between the second and the first method (default: 2)')
    parser.add_argument('--component', default='total', help='Trajectory row to compare (default: total)')
    parser.add_argument('--output', help='Path to save a JSON report')

    args = parser.parse_args(argv)

    for path in (args.parameters, args.trajectories, args.replications, args.compare, args.targets):
        if path and not Path(path).exists():
            print(f"Error: File '{path}' not found")
            return 1

    try:
        parameters, trajectories = load_tables(args.parameters, args.trajectories)
        outcomes = []
        if args.targets:
            replications = load_replications(args.replications) if args.replications else None
            outcomes = check_targets(parameters, trajectories, load_targets(args.targets, args.section),
                                     replications)
        comparison = None
        if args.compare:
            other = pd.read_csv(args.compare, dtype={'component': str}).set_index('component')
            comparison = compare_methods(trajectories, other, args.factor, args.component)

        generate_report(outcomes, comparison, args.parameters, args.trajectories, args.output)

        passed = all(o['passed'] for o in outcomes) and (comparison is None or comparison['passed'])
        return 0 if passed else 1

    except Exception as e:
        print(f"\nError: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
