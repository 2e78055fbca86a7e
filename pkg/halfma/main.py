import argparse
import logging
import logging.handlers
import math
import os
import sys
import time
import traceback
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from halfma import __version__
from halfma.asymptotics import (normalization_iteration, section_sandwich_check,
                                xi_comparison_experiment)
from halfma.base import (BarrierSpec, CheckReport, ConfigurationError, QuadraticData,
                         UnsupportedDimensionError, ValidationError)
from halfma.checkpoint import dump_json, write_atomic
from halfma.const import COMMANDS, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, LOG_NAME
from halfma.grid import HalfGrid, ScalarField, build_half_grid
from halfma.linear import (barrier_laplacian_study, barrier_radius_sweep,
                           barrier_supersolution_check, growth_bound_sweep,
                           identity_coefficients, limit_at_infinity_experiment,
                           poisson_kernel_study, random_coefficients,
                           strict_interior_bound_experiment)
from halfma.monge import bottom_gradient_check, ma_residual, solve_ma_dirichlet
from halfma.oracles import barrier_w, poisson_rate, remark_solution
from halfma.parser import RunConfig, load_run_config, quadratic_data, solver_config, source_term
from halfma.query import lab_query
from halfma.scheme import full_pipeline, liouville_test
from halfma.utils import LabLogFormatter, full_line_banner, print_timings


def kernel_profile(x: np.ndarray, dim: int) -> np.ndarray:
    """x_n/|x|^n away from the origin, 0 at the origin node."""
    x = np.asarray(x, dtype=float)
    values = np.zeros(x.shape[:-1])
    nonzero = np.linalg.norm(x, axis=-1) > 0
    values[nonzero] = poisson_rate(x[nonzero], dim)
    return values


def _upper_half_points(rng: np.random.Generator, dim: int, count: int,
                       r_min: float, r_max: float, min_height: float = 0.0) -> np.ndarray:
    directions = rng.normal(size=(count, dim))
    directions[:, -1] = np.abs(directions[:, -1]) + 1e-3
    directions /= np.linalg.norm(directions, axis=-1)[:, None]
    radii = np.exp(rng.uniform(math.log(r_min), math.log(r_max), count))
    points = radii[:, None] * directions
    points[:, -1] = np.maximum(points[:, -1], min_height)
    return points


class LabCore(object):

    handlers: List[logging.Handler] = []

    def __init__(self, args) -> None:
        self.debug = args.debug
        self.quiet = args.quiet
        self.command = args.command
        self.config_path = args.config
        self.out_dir = args.out
        self.seed = args.seed
        self.timings: List[Tuple[str, float]] = []
        self.init()

    def init(self) -> None:
        sys.excepthook = self.lab_except_hdr
        if not self.quiet:
            print(full_line_banner(f'Welcome to halfma-lab - {__version__}'))
        if self.debug:
            log_verbosity = logging.DEBUG
        elif self.quiet:
            log_verbosity = logging.WARNING
        else:
            log_verbosity = logging.INFO
        try:
            if not os.path.isdir(self.out_dir):
                os.makedirs(self.out_dir)
        except OSError as ex:
            raise IOError(f'\033[93mFailed to create output directory {self.out_dir}\033[0m!') from ex
        self.__install_logger(log_verbosity)

    def __install_logger(self, str_verbosity=logging.INFO,
                         file_verbosity=logging.DEBUG):
        logger = logging.getLogger()
        logger.setLevel(0)  # Set to lowest to bypass the initial filter
        for handler in LabCore.handlers:
            logger.removeHandler(handler)
            handler.close()
        str_handler = logging.StreamHandler()
        str_handler.setLevel(str_verbosity)
        str_handler.setFormatter(LabLogFormatter())
        logger.addHandler(str_handler)
        log_file_handler = logging.handlers.RotatingFileHandler(
            os.path.join(self.out_dir, LOG_NAME), mode='a', maxBytes=2e5, backupCount=3)
        log_file_handler.setLevel(file_verbosity)
        log_file_handler.setFormatter(logging.Formatter(
            '%(asctime)s:%(levelname)s:%(message)s'))
        logger.addHandler(log_file_handler)
        LabCore.handlers = [str_handler, log_file_handler]

    def run(self) -> int:
        try:
            config = load_run_config(self.config_path, self.command)
        except ConfigurationError as ex:
            logging.error(f'Invalid configuration: {ex}')
            return EXIT_CONFIG
        if self.seed is not None:
            config.seed = self.seed
        if self.command == 'suite':
            code = self.run_suite(config)
        else:
            code = self.run_command(self.command, config.section(self.command), config.seed)
        if not self.quiet:
            print_timings(self.timings)
        return code

    def run_suite(self, config: RunConfig) -> int:
        codes = {}
        for command in COMMANDS:
            if command == 'suite':
                continue
            codes[command] = self.run_command(command, config.section(command), config.seed)
        dump_json(os.path.join(self.out_dir, 'suite.json'),
                  {'version': __version__, 'seed': config.seed, 'exit_codes': codes})
        return max(codes.values())

    def run_command(self, command: str, options: Dict[str, Any], seed: int) -> int:
        handler = getattr(self, f'cmd_{command}')
        logging.info(f'Running {command}...')
        start = time.monotonic()
        try:
            report = handler(options, seed)
        except ConfigurationError as ex:
            logging.error(f'Invalid configuration for {command}: {ex}')
            return EXIT_CONFIG
        except (ValueError, RuntimeError, IndexError) as ex:
            logging.error(f'{command} failed: {type(ex).__name__}: {ex}')
            logging.debug('Traceback:\n' + traceback.format_exc())
            report = CheckReport(command, False, error=f'{type(ex).__name__}: {ex}')
        finally:
            self.timings.append((command, time.monotonic() - start))
        dump_json(os.path.join(self.out_dir, f'{command}.json'),
                  {'command': command, 'version': __version__, 'seed': seed, 'config': options,
                   'passed': report.passed, 'report': report.to_dict()})
        if report.passed:
            logging.info(f'{command}: pass')
            return EXIT_OK
        logging.warning(f'{command}: fail')
        return EXIT_FAILURE

    def _grid(self, dim: int, L: float, L_n: float, h: float, field: str) -> HalfGrid:
        try:
            return build_half_grid(dim, L, L_n, h)
        except ConfigurationError as ex:
            raise ConfigurationError(str(ex), field=field) from ex
        except UnsupportedDimensionError as ex:
            raise ConfigurationError(str(ex), field='dim') from ex

    def _newton_log(self, command: str) -> str:
        # the iteration log is appended to, start every run afresh
        path = os.path.join(self.out_dir, f'{command}-newton.csv')
        if os.path.exists(path):
            os.remove(path)
        return path

    def cmd_solve(self, options: Dict[str, Any], seed: int) -> CheckReport:
        grid_options = options['grid']
        dim = grid_options['dim']
        grid = self._grid(dim, grid_options['L'], grid_options['L_n'], grid_options['h'], 'grid')
        f = source_term(options, dim)
        config = solver_config(options, self._newton_log('solve'))
        boundary = options['boundary']
        if boundary == 'remark':
            data = lambda x: remark_solution(x, dim)[0]  # noqa: E731
            exact = f.R0 == 0
        elif boundary == 'quadratic':
            q = quadratic_data(options, dim, normalized=False)
            data = q.evaluate
            exact = f.R0 == 0 and abs(np.linalg.det(q.A) - 1.0) <= 1e-12
        else:
            raise ConfigurationError(f'unknown boundary data {boundary!r}', field='boundary')
        u = solve_ma_dirichlet(grid, f, data, config)
        write_atomic(os.path.join(self.out_dir, 'solve.csv'), u.to_csv())
        metrics: Dict[str, Any] = {
            'iterations': u.meta['iterations'], 'residual': u.meta['residual'],
            'history': u.meta['history'], 'field': u.header(),
            'ma_residual': ma_residual(u, f).sup_norm(grid.interior_mask()),
            'bottom_gradient': bottom_gradient_check(u, f.Lam).to_dict(),
        }
        if exact:
            metrics['error'] = (u - ScalarField.from_function(grid, data)).sup_norm()
        return CheckReport('solve', True, **metrics)

    def cmd_verify(self, options: Dict[str, Any], seed: int) -> CheckReport:
        dim = options['dim']
        f = source_term(options, dim)
        q = quadratic_data(options, dim, normalized=False)
        config = solver_config(options, self._newton_log('verify'))
        return full_pipeline(f, q, options['radii'], options['levels'], options['cells'],
                             options['h_max'], config)

    def cmd_barrier(self, options: Dict[str, Any], seed: int) -> CheckReport:
        rng = np.random.default_rng(seed)
        dim = options['dim']
        try:
            spec = BarrierSpec(options['s'], options['delta'], dim=dim)
        except ValidationError as ex:
            raise ConfigurationError(str(ex), field='delta') from ex
        points = _upper_half_points(rng, dim, 10000, 1.0, 100.0)
        _, _, hess, laplacian = barrier_w(points, spec)
        trace_gap = float(np.max(np.abs(np.trace(hess, axis1=-2, axis2=-1) - laplacian)))
        stencil = barrier_laplacian_study(spec, _upper_half_points(rng, dim, 32, 2.0, 10.0, 1.0))
        identity = barrier_supersolution_check(identity_coefficients(dim), spec, points)
        fields = []
        for k in range(options['fields']):
            coeffs = random_coefficients(rng, dim, spec.s, options['lambda'], options['Lambda'])
            sweep = barrier_radius_sweep(coeffs, spec, 1.0, options['r_max'], options['radii'],
                                         options['angles'])
            R1 = sweep['R1']
            entry: Dict[str, Any] = {'R1': R1, 'passed': False}
            if math.isfinite(R1) and 2 * R1 < options['r_max']:
                sample = _upper_half_points(rng, dim, 1000, 2 * R1, options['r_max'])
                check = barrier_supersolution_check(
                    coeffs, BarrierSpec(spec.s, spec.delta, R1=R1, dim=dim), sample)
                entry.update(passed=check.passed, max_value=check['max_value'])
            logging.debug(f'barrier field {k}: {entry}')
            fields.append(entry)
        passed = (trace_gap <= 1e-10 and stencil.passed and identity.passed
                  and all(entry['passed'] for entry in fields))
        return CheckReport('barrier', passed, delta=spec.delta, trace_gap=trace_gap,
                           stencil=stencil.to_dict(), identity=identity.to_dict(), fields=fields)

    def cmd_linear(self, options: Dict[str, Any], seed: int) -> CheckReport:
        rng = np.random.default_rng(seed)
        dim = options['dim']
        if dim not in (2, 3):
            raise ConfigurationError(f'dimension {dim} is not supported', field='dim')
        R0 = options['R0']
        poisson = poisson_kernel_study(options['spacings'], dim, R0)
        eps0 = []
        for _ in range(options['fields']):
            coeffs = random_coefficients(rng, dim, options['s'], options['lambda'],
                                         options['Lambda'], R0)
            eps0.append(strict_interior_bound_experiment(coeffs, R0)['eps0'])
        identity = identity_coefficients(dim)
        limit = limit_at_infinity_experiment(identity, options['beta'], options['schedule'],
                                             h=options['h'])
        growth = growth_bound_sweep(identity, (0.1, 0.01, 0.001), R0)
        passed = poisson.passed and min(eps0) > 0 and limit.passed and growth.passed
        return CheckReport('linear', passed, poisson=poisson.to_dict(), eps0=eps0,
                           eps0_min=min(eps0), limit=limit.to_dict(), growth=growth.to_dict())

    def _section_field(self, options: Dict[str, Any], grid: HalfGrid) -> ScalarField:
        dim = grid.dim
        kind = options['field']
        if kind == 'remark':
            return ScalarField.from_function(grid, lambda x: remark_solution(x, dim)[0])
        q = quadratic_data(options, dim)
        if kind == 'quadratic':
            return ScalarField.from_function(grid, q.evaluate)
        if kind == 'kernel':
            return ScalarField.from_function(grid, lambda x: q.evaluate(x) + kernel_profile(x, dim))
        raise ConfigurationError(f'unknown field {kind!r}', field='field')

    def cmd_sections(self, options: Dict[str, Any], seed: int) -> CheckReport:
        dim = options['dim']
        grid = self._grid(dim, options['L'], options['L'], options['h'], 'L')
        field = self._section_field(options, grid)
        levels = options['levels']
        geometry, report = normalization_iteration(field, levels)
        sandwich = [section_sandwich_check(field, b.level, a.level, b.hessian, options['slack']).metrics
                    for a, b in zip(geometry, geometry[1:])]
        rows = ['level,' + ','.join(f't{i}{j}' for i in range(dim) for j in range(dim)) + ',difference']
        differences = [0.0] + report['differences']
        for g, difference in zip(geometry, differences):
            rows.append(','.join([repr(g.level)] + [repr(float(t)) for t in g.T.reshape(-1)]
                                 + [repr(difference)]))
        write_atomic(os.path.join(self.out_dir, 'sections.csv'), '\n'.join(rows) + '\n')
        metrics = dict(report.metrics)
        metrics.update(geometry=[g.to_dict() for g in geometry], sandwich=sandwich)
        passed = report.passed
        if options['xi_levels']:
            if dim != 2:
                raise ConfigurationError('the scaling study runs in two dimensions', field='xi_levels')
            xi = xi_comparison_experiment(source_term(options, 2), options['xi_levels'],
                                          h=options['xi_h'])
            metrics['xi'] = xi.to_dict()
            passed = passed and xi.passed
        return CheckReport('sections', passed, **metrics)

    def cmd_liouville(self, options: Dict[str, Any], seed: int) -> CheckReport:
        dim = options['dim']
        config = solver_config(options, self._newton_log('liouville'))
        results = []
        for k, A in enumerate(options['quadratics']):
            try:
                p = QuadraticData(A)
                if p.dim != dim:
                    raise ValidationError(f'expected a {dim}x{dim} matrix')
            except (ValidationError, TypeError, ValueError) as ex:
                raise ConfigurationError(str(ex), field=f'quadratics[{k}]') from ex
            results.append(liouville_test(p, options['R'], options['h'], config,
                                          options['tolerance']).to_dict())
        return CheckReport('liouville', all(r['passed'] for r in results), quadratics=results)

    def lab_except_hdr(self, type_, value, tb):
        logging.debug('Traceback:\n' + ''.join(traceback.format_tb(tb)))
        if self.debug:
            sys.__excepthook__(type_, value, tb)
        else:
            print()
            logging.fatal('Oops! \033[93m%s\033[0m: \033[93m%s\033[0m' % (
                str(type_.__name__), str(value)))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog='halfma-lab', description='Monge-Ampère half-space laboratory')
    parser.add_argument('-v', '--version', action='version',
                        version=f'halfma-lab {__version__}')
    parser.add_argument('-d', '--debug', help='Increase verbosity to ease debugging process',
                        action='store_true')
    parser.add_argument('-q', '--query', help='Evaluate a closed-form profile, e.g. remark:2,1')
    parser.add_argument('--config', help='JSON run configuration')
    parser.add_argument('--out', help='Output directory', default='halfma-out')
    parser.add_argument('--seed', help='Override the seed of the run configuration', type=int)
    parser.add_argument('--quiet', help='Only print warnings and errors', action='store_true')
    parser.add_argument('command', nargs='?', choices=COMMANDS, help='Experiment to run')
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return EXIT_OK if not ex.code else EXIT_CONFIG
    if args.query:
        result = lab_query(args.query)
        if result is None:
            print(f'Invalid query: {args.query}', file=sys.stderr)
            return EXIT_CONFIG
        print(result)
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    return LabCore(args).run()
