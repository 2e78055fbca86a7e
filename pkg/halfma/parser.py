import copy
import json
import logging
import numbers
from typing import Any, Dict, Optional

import numpy as np

from halfma.base import (ConfigurationError, QuadraticData, SolverConfig, SourceTerm,
                         ValidationError)
from halfma.const import COMMANDS, CONFIG_SCHEMA, DEFAULTS
from halfma.monge import bump_source, constant_source

SOLVER_KEYS = ('tolerance', 'max_iterations', 'backtrack', 'min_step', 'convex_floor', 'linear_rtol')
QUADRATIC_KEYS = ('A', 'b', 'c')


class RunConfig(object):
    def __init__(self, command: str, options: Dict[str, Any], seed: int = 0) -> None:
        self.command = command
        self.options = options
        self.seed = seed

    def section(self, command: str) -> Dict[str, Any]:
        """Options of one command; a suite run keeps one section per command."""
        if self.command == 'suite':
            return self.options[command]
        return self.options

    def __repr__(self) -> str:
        return f'<RunConfig {self.command} seed={self.seed}>'


def _is_number(value: Any) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _merge(defaults: Dict[str, Any], given: Dict[str, Any], prefix: str) -> Dict[str, Any]:
    if not isinstance(given, dict):
        raise ConfigurationError('expected an object', field=prefix.rstrip('.') or None)
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        field = f'{prefix}{key}'
        if key not in defaults:
            raise ConfigurationError('unknown option', field=field)
        default = defaults[key]
        if key == 'solver':
            merged[key] = _check_solver(value, field)
        elif key == 'quadratic':
            merged[key] = _check_quadratic(value, field)
        elif isinstance(default, dict):
            merged[key] = _merge(default, value, f'{field}.')
        elif _is_number(default):
            if not _is_number(value):
                raise ConfigurationError(f'expected a number, got {value!r}', field=field)
            if isinstance(default, int) and not float(value).is_integer():
                raise ConfigurationError(f'expected an integer, got {value!r}', field=field)
            merged[key] = type(default)(value)
        elif isinstance(default, list):
            if not isinstance(value, list) or (default and not value):
                raise ConfigurationError('expected a non-empty list', field=field)
            merged[key] = value
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigurationError(f'expected a string, got {value!r}', field=field)
            merged[key] = value
        else:
            merged[key] = value
    return merged


def _check_solver(value: Any, field: str) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigurationError('expected an object', field=field)
    for key, item in value.items():
        if key not in SOLVER_KEYS:
            raise ConfigurationError('unknown option', field=f'{field}.{key}')
        if not _is_number(item):
            raise ConfigurationError(f'expected a number, got {item!r}', field=f'{field}.{key}')
    return dict(value)


def _check_quadratic(value: Any, field: str) -> Optional[Dict[str, Any]]:
    if value is None:
        return None
    if not isinstance(value, dict) or 'A' not in value:
        raise ConfigurationError('expected an object with a matrix A', field=field)
    for key in value:
        if key not in QUADRATIC_KEYS:
            raise ConfigurationError('unknown option', field=f'{field}.{key}')
    return dict(value)


def parse_run_config(data: Dict[str, Any], command: str) -> RunConfig:
    """
    Validate a decoded run configuration and merge it over the defaults of
    ``command``. A suite configuration holds one object per command.

    :param data: decoded JSON object
    :param command: one of COMMANDS
    :returns: the merged configuration
    """
    if command not in COMMANDS:
        raise ConfigurationError(f'unknown command {command}', field='command')
    if not isinstance(data, dict):
        raise ConfigurationError('the configuration must be a JSON object')
    data = dict(data)
    schema = data.pop('schema', CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigurationError(f'unsupported schema {schema!r}, expected {CONFIG_SCHEMA}',
                                 field='schema')
    seed = data.pop('seed', 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError(f'expected a non-negative integer, got {seed!r}', field='seed')
    if command == 'suite':
        suite_defaults = {name: DEFAULTS[name] for name in COMMANDS if name != 'suite'}
        options = {}
        for key in data:
            if key not in suite_defaults:
                raise ConfigurationError('unknown option', field=key)
        for name, defaults in suite_defaults.items():
            options[name] = _merge(defaults, data.get(name, {}), f'{name}.')
    else:
        options = _merge(DEFAULTS[command], data, '')
    logging.debug(f'Merged {command} configuration: {options}')
    return RunConfig(command, options, seed)


def load_run_config(path: Optional[str], command: str) -> RunConfig:
    if path is None:
        return parse_run_config({}, command)
    try:
        with open(path, 'rt') as f:
            data = json.load(f)
    except OSError as ex:
        raise ConfigurationError(f'cannot read {path}: {ex}') from ex
    except json.JSONDecodeError as ex:
        raise ConfigurationError(f'{path} is not valid JSON: {ex}') from ex
    return parse_run_config(data, command)


def solver_config(options: Dict[str, Any], log_path: Optional[str] = None,
                  field: str = 'solver') -> SolverConfig:
    try:
        return SolverConfig(log_path=log_path, **options.get('solver', {}))
    except ValidationError as ex:
        raise ConfigurationError(str(ex), field=field) from ex


def source_term(options: Dict[str, Any], dim: int) -> SourceTerm:
    """f = 1 when the amplitude is zero, the half-ball bump otherwise."""
    source = options['source']
    try:
        if source['amplitude'] == 0:
            return constant_source(1.0, dim)
        if not source['radius'] > 0:
            raise ValidationError(f'bump radius must be positive, got {source["radius"]}')
        return bump_source(source['amplitude'], source['radius'], dim, source['sampling'])
    except ValidationError as ex:
        raise ConfigurationError(str(ex), field='source') from ex


def quadratic_data(options: Dict[str, Any], dim: int, normalized: bool = True,
                   field: str = 'quadratic') -> QuadraticData:
    value = options.get('quadratic')
    if value is None:
        return QuadraticData.identity(dim)
    try:
        A = np.asarray(value['A'], dtype=float)
        if A.shape != (dim, dim):
            raise ValidationError(f'A must be {dim}x{dim}, got shape {A.shape}')
        return QuadraticData(A, value.get('b'), value.get('c', 0.0), normalized=normalized)
    except (ValidationError, TypeError, ValueError) as ex:
        raise ConfigurationError(str(ex), field=field) from ex
