import os
import json
import hashlib
import logging

import numpy as np
import yaml

from harness import FitSettings, Scenario
from lambda_select import LambdaConfig
from models import UnknownModelError, get_model
from odesolve import SolveConfig
from posterior import PRIOR_KINDS
from quadrature import INNER_SCHEMES
from sampler import NutsConfig

PACKAGE_VERSION = '0.1.0'

SCHEMA = {
    'model': None,
    'prior': None,
    'basis': {'order': None, 'num_basis': None},
    'quadrature': {'M': None, 'K': None, 'inner_scheme': None},
    'lambda': {'lambda0': None, 'lambda_star': None, 'alpha': None, 'max': None, 'multiplier': None},
    'nuts': {'iterations': None, 'warmup': None, 'target_accept': None, 'max_depth': None, 'seed': None},
    'init': {'roughness_penalty': None, 'sigma': None, 'theta': None},
    'simulation': {'theta': None, 'x0': None, 'sigma': None, 'times': None, 'replications': None,
                   'seed': None, 'solver': {'rel_tol': None, 'abs_tol': None}},
    'data': {'path': None, 'domain': None},
    'evaluation': {'n_grid': None, 'level': None},
    'output': {'directory': None},
    'processing': {'threads': None, 'log_level': None, 'progress': None},
}

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


class ConfigurationError(Exception):
    pass


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _reject_unknown(section, schema, prefix=''):
    if not isinstance(section, dict):
        raise ConfigurationError(f"Section '{prefix.rstrip('.') or 'root'}' must be a mapping")
    for key, value in section.items():
        dotted = f"{prefix}{key}"
        if key not in schema:
            raise ConfigurationError(f"Unknown configuration key: {dotted}")
        if isinstance(schema[key], dict) and value is not None:
            _reject_unknown(value, schema[key], f"{dotted}.")


def _number(value, key, integer=False):
    # PyYAML reads exponent literals without a dot (1e6) as strings
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be a number, got {value!r}")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigurationError(f"{key} must be a number, got {value!r}")
    if not isinstance(value, (int, float)):
        raise ConfigurationError(f"{key} must be a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _vector(value, key, length=None):
    if not isinstance(value, (list, tuple)):
        raise ConfigurationError(f"{key} must be a list of numbers")
    values = tuple(_number(v, f"{key}[{k}]") for k, v in enumerate(value))
    if length is not None and len(values) != length:
        raise ConfigurationError(f"{key} must have {length} entries, got {len(values)}")
    return values


class ConfigLoader:
    def __init__(self, config_path):
        self.config_path = config_path
        self.config = self._load_config()
        self.validate()

    def _load_config(self):
        if not os.path.exists(self.config_path):
            raise ConfigurationError(f"Configuration file not found: {self.config_path}")

        try:
            with open(self.config_path, 'r') as f:
                config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Error parsing YAML configuration: {e}")
        if config is None:
            raise ConfigurationError("Configuration file is empty")
        if not isinstance(config, dict):
            raise ConfigurationError("Configuration must be a mapping")

        if 'config' in config and 'config_hash' in config:
            logging.info(f"Reusing the configuration embedded in manifest {self.config_path}")
            config = config['config']
            if config is None:
                raise ConfigurationError(f"Manifest {self.config_path} records no configuration; "
                                         f"rerun it with 'check --seed'")
        return config

    def validate(self):
        _reject_unknown(self.config, SCHEMA)

        if 'model' not in self.config:
            raise ConfigurationError("Missing required field: model")
        try:
            self.model = get_model(str(self.config['model']))
        except UnknownModelError as e:
            raise ConfigurationError(f"model: {e}")

        if self.get_prior_kind() not in PRIOR_KINDS:
            raise ConfigurationError(f"Invalid prior: {self.get_prior_kind()}. Must be one of {PRIOR_KINDS}")

        if 'basis' not in self.config or 'num_basis' not in (self.config['basis'] or {}):
            raise ConfigurationError("Missing required field: basis.num_basis")
        order, num_basis = self.get_basis_settings()
        if order < 2:
            raise ConfigurationError(f"basis.order must be at least 2, got {order}")
        if num_basis < order:
            raise ConfigurationError(f"basis.num_basis must be at least basis.order ({order}), got {num_basis}")

        self.get_quadrature_settings()

        if 'lambda' not in self.config:
            raise ConfigurationError("Missing required section: lambda")
        for key in ('lambda0', 'lambda_star'):
            if key not in (self.config['lambda'] or {}):
                raise ConfigurationError(f"Missing required field: lambda.{key}")
        self.get_lambda_config()
        self.get_nuts_config()
        self.get_init_settings()
        self.get_evaluation()

        if 'simulation' in self.config:
            self.get_scenario()
        if 'data' in self.config and 'path' not in (self.config['data'] or {}):
            raise ConfigurationError("Missing required field: data.path")
        if 'data' in self.config:
            self.get_data_domain()

        threads = self.get_threads()
        if threads is not None and threads < 1:
            raise ConfigurationError(f"processing.threads must be positive, got {threads}")
        if self.get_log_level() not in LOG_LEVELS:
            raise ConfigurationError(f"processing.log_level must be one of {LOG_LEVELS}")

    def apply_overrides(self, prior=None, seed=None, threads=None, output=None, data=None):
        if prior is not None:
            self.config['prior'] = prior
        if seed is not None:
            self.config.setdefault('nuts', {})['seed'] = seed
            if 'simulation' in self.config:
                self.config['simulation']['seed'] = seed
        if threads is not None:
            self.config.setdefault('processing', {})['threads'] = threads
        if output is not None:
            self.config.setdefault('output', {})['directory'] = output
        if data is not None:
            self.config.setdefault('data', {})['path'] = data
        self.validate()

    def _section(self, name):
        return self.config.get(name) or {}

    @property
    def simulation_settings(self):
        return self._section('simulation')

    @property
    def processing_settings(self):
        return self._section('processing')

    def get_model_name(self):
        return self.model.name

    def get_prior_kind(self):
        return self.config.get('prior', 'integral')

    def get_basis_settings(self):
        basis = self._section('basis')
        return (_number(basis.get('order', 4), 'basis.order', integer=True),
                _number(basis['num_basis'], 'basis.num_basis', integer=True))

    def get_quadrature_settings(self):
        quadrature = self.config.get('quadrature', 'auto')
        if quadrature == 'auto' or quadrature is None:
            return 'auto', 'auto', 'composite'
        if not isinstance(quadrature, dict):
            raise ConfigurationError("quadrature must be 'auto' or a mapping")
        sizes = []
        for key in ('M', 'K'):
            value = quadrature.get(key, 'auto')
            if value != 'auto':
                value = _number(value, f'quadrature.{key}', integer=True)
                if value < 1:
                    raise ConfigurationError(f"quadrature.{key} must be positive, got {value}")
            sizes.append(value)
        scheme = quadrature.get('inner_scheme', 'composite')
        if scheme not in INNER_SCHEMES:
            raise ConfigurationError(f"quadrature.inner_scheme must be one of {INNER_SCHEMES}")
        return sizes[0], sizes[1], scheme

    def get_lambda_config(self):
        section = self._section('lambda')
        try:
            return LambdaConfig(
                lambda0=_number(section.get('lambda0'), 'lambda.lambda0'),
                lambda_star=_number(section.get('lambda_star'), 'lambda.lambda_star'),
                lambda_max=_number(section.get('max', 1e6), 'lambda.max'),
                alpha=_number(section.get('alpha', 0.1), 'lambda.alpha'),
                multiplier=_number(section.get('multiplier', 10), 'lambda.multiplier'),
            )
        except ValueError as e:
            raise ConfigurationError(f"lambda: {e}")

    def get_nuts_config(self):
        section = self._section('nuts')
        try:
            return NutsConfig(
                num_iterations=_number(section.get('iterations', 400), 'nuts.iterations', integer=True),
                num_warmup=_number(section.get('warmup', 200), 'nuts.warmup', integer=True),
                target_accept=_number(section.get('target_accept', 0.8), 'nuts.target_accept'),
                max_tree_depth=_number(section.get('max_depth', 10), 'nuts.max_depth', integer=True),
                seed=_number(section.get('seed', 1), 'nuts.seed', integer=True),
            )
        except ValueError as e:
            raise ConfigurationError(f"nuts: {e}")

    def get_init_settings(self):
        section = self._section('init')
        penalty = _number(section.get('roughness_penalty', 0.1), 'init.roughness_penalty')
        sigma = _number(section.get('sigma', 0.1), 'init.sigma')
        if penalty < 0 or sigma <= 0:
            raise ConfigurationError("init.roughness_penalty must be >= 0 and init.sigma > 0")
        theta = section.get('theta')
        if theta is not None:
            theta = _vector(theta, 'init.theta', self.model.dim_params)
            if any(t <= 0 for t, positive in zip(theta, self.model.param_positive) if positive):
                raise ConfigurationError("init.theta must be positive for positive-constrained parameters")
        return {'roughness_penalty': penalty, 'sigma': sigma, 'theta': theta}

    def get_evaluation(self):
        section = self._section('evaluation')
        n_grid = _number(section.get('n_grid', 2001), 'evaluation.n_grid', integer=True)
        level = _number(section.get('level', 0.95), 'evaluation.level')
        if n_grid < 100:
            raise ConfigurationError(f"evaluation.n_grid must be at least 100, got {n_grid}")
        if not 0 < level < 1:
            raise ConfigurationError(f"evaluation.level must lie in (0, 1), got {level}")
        return {'n_grid': n_grid, 'level': level}

    def get_solver_config(self):
        solver = self.simulation_settings.get('solver') or {}
        try:
            return SolveConfig(rel_tol=_number(solver.get('rel_tol', 1e-8), 'simulation.solver.rel_tol'),
                               abs_tol=_number(solver.get('abs_tol', 1e-8), 'simulation.solver.abs_tol'))
        except ValueError as e:
            raise ConfigurationError(f"simulation.solver: {e}")

    def get_fit_settings(self):
        order, num_basis = self.get_basis_settings()
        M, K, scheme = self.get_quadrature_settings()
        init = self.get_init_settings()
        evaluation = self.get_evaluation()
        return FitSettings(
            lambda_config=self.get_lambda_config(),
            nuts=self.get_nuts_config(),
            order=order,
            num_basis=num_basis,
            M=M,
            K=K,
            inner_scheme=scheme,
            prior_kind=self.get_prior_kind(),
            roughness_penalty=init['roughness_penalty'],
            sigma_init=init['sigma'],
            theta_init=init['theta'],
            level=evaluation['level'],
            n_grid=evaluation['n_grid'],
            solver=self.get_solver_config(),
            progress=self.get_progress(),
        )

    def _observation_times(self):
        times = self.simulation_settings.get('times')
        names = self.model.state_names
        if times is None:
            raise ConfigurationError("Missing required field: simulation.times")
        if isinstance(times, dict) and set(times) <= {'start', 'stop', 'num'}:
            if set(times) != {'start', 'stop', 'num'}:
                raise ConfigurationError("simulation.times needs start, stop and num")
            num = _number(times['num'], 'simulation.times.num', integer=True)
            if num < 2:
                raise ConfigurationError("simulation.times.num must be at least 2")
            grid = np.linspace(_number(times['start'], 'simulation.times.start'),
                               _number(times['stop'], 'simulation.times.stop'), num)
            schedule = [tuple(grid.tolist())] * len(names)
        elif isinstance(times, dict):
            unknown = set(times) - set(names)
            if unknown:
                raise ConfigurationError(f"Unknown configuration key: simulation.times.{sorted(unknown)[0]}")
            missing = [name for name in names if name not in times]
            if missing:
                raise ConfigurationError(f"Missing required field: simulation.times.{missing[0]}")
            schedule = [_vector(times[name], f'simulation.times.{name}') for name in names]
        else:
            schedule = [_vector(times, 'simulation.times')] * len(names)

        for name, component in zip(names, schedule):
            if len(component) < 2 or np.any(np.diff(component) <= 0):
                raise ConfigurationError(f"simulation.times for '{name}' must be strictly increasing "
                                         f"with at least two entries")
        return tuple(schedule)

    def get_scenario(self):
        if 'simulation' not in self.config:
            raise ConfigurationError("Missing required section: simulation")
        sim = self.simulation_settings
        for key in ('theta', 'x0', 'sigma'):
            if key not in sim:
                raise ConfigurationError(f"Missing required field: simulation.{key}")
        sigma = sim['sigma']
        if not isinstance(sigma, (list, tuple)):
            sigma = [sigma] * self.model.dim_state
        sigma = _vector(sigma, 'simulation.sigma', self.model.dim_state)
        if any(s < 0 for s in sigma):
            raise ConfigurationError("simulation.sigma must be non-negative")
        replications = _number(sim.get('replications', 1), 'simulation.replications', integer=True)
        if replications < 1:
            raise ConfigurationError(f"simulation.replications must be at least 1, got {replications}")
        return Scenario(
            model_name=self.model.name,
            theta=_vector(sim['theta'], 'simulation.theta', self.model.dim_params),
            x0=_vector(sim['x0'], 'simulation.x0', self.model.dim_state),
            sigma=sigma,
            times=self._observation_times(),
            settings=self.get_fit_settings(),
            replications=replications,
            seed=_number(sim.get('seed', 0), 'simulation.seed', integer=True),
        )

    def get_data_path(self):
        path = self._section('data').get('path')
        if path is None:
            raise ConfigurationError("Missing required field: data.path (or pass --data)")
        return path

    def get_data_domain(self):
        domain = self._section('data').get('domain')
        if domain is None:
            return None
        domain = _vector(domain, 'data.domain', 2)
        if not domain[1] > domain[0]:
            raise ConfigurationError(f"data.domain must be increasing, got {list(domain)}")
        return domain

    def get_output_directory(self):
        return self._section('output').get('directory', 'results')

    def get_threads(self):
        threads = self.processing_settings.get('threads')
        return None if threads is None else _number(threads, 'processing.threads', integer=True)

    def get_log_level(self):
        return str(self.processing_settings.get('log_level', 'INFO')).upper()

    def get_progress(self):
        return bool(self.processing_settings.get('progress', False))
