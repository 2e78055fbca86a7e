import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from halfma.asymptotics import (decay_exponent, derivative_decay, fit_quadratic_asymptote,
                                normalization_iteration, residual_field)
from halfma.base import (ArgumentError, CheckReport, DecayFit, LinearSolverError,
                         NonConvergenceError, QuadraticData, SolverConfig, SourceTerm,
                         ValidationError)
from halfma.grid import ScalarField, annulus_mask, build_half_grid
from halfma.monge import (bottom_gradient_check, constant_source, sandwich_check,
                          solve_ma_dirichlet)


def truncation_boundary_data(q: QuadraticData, b_n: float, R: float) -> Callable[[np.ndarray], np.ndarray]:
    """
    Dirichlet data q(x) + b_n x_n for the truncation of radius R. On the
    bottom it reduces to the bottom polynomial of q.
    """
    if not R > 0:
        raise ArgumentError(f'Truncation radius must be positive, got {R}')
    shifted = q.with_normal_slope(b_n)
    return shifted.evaluate


def spacing_for(R: float, cells: int, h_max: float) -> float:
    """Dyadic spacing with about ``cells`` cells across R, never coarser than h_max."""
    h = 2.0 ** (-math.ceil(math.log2(cells / R)))
    cap = 2.0 ** math.floor(math.log2(h_max))
    return min(h, cap)


class ScheduleResult(object):
    def __init__(self) -> None:
        self.fields: Dict[float, ScalarField] = {}
        self.b_n = 0.0
        self.b_n_estimates: Dict[float, float] = {}
        self.deviations: List[Dict[str, float]] = []
        self.failures: List[Dict[str, Any]] = []
        self.bounds: Dict[float, CheckReport] = {}

    @property
    def radii(self) -> List[float]:
        return sorted(self.fields)

    def largest(self) -> ScalarField:
        return self.fields[self.radii[-1]]

    def to_dict(self) -> Dict[str, Any]:
        return {'radii': self.radii, 'b_n': self.b_n, 'b_n_estimates': self.b_n_estimates,
                'deviations': self.deviations, 'failures': self.failures,
                'bounds': {str(R): report.to_dict() for R, report in self.bounds.items()}}

    def __repr__(self) -> str:
        return f'<ScheduleResult radii={self.radii} b_n={self.b_n:.6g} failures={len(self.failures)}>'


def _check_quadratic(q: QuadraticData) -> None:
    if not q.is_positive_definite() or abs(np.linalg.det(q.A) - 1.0) > 1e-10:
        raise ValidationError('The asymptotic quadratic must be positive definite with det A = 1')


def _fitted_normal_slope(field: ScalarField, q: QuadraticData, R: float) -> float:
    fit = fit_quadratic_asymptote(field, annulus_mask(field.grid, R / 4, R / 2), constrain_bottom=True,
                                  boundary=q.bottom_restriction(), kernel_term=True)
    return float(fit.b[-1] - q.b[-1])


def expanding_domain_solve(f: SourceTerm, q: QuadraticData, radii: Sequence[float],
                           mode: str = 'two_pass', b_n: float = 0.0, cells: int = 64,
                           h_max: float = 0.125, config: Optional[SolverConfig] = None,
                           compact: float = 2.0) -> ScheduleResult:
    """
    Solve the truncated Dirichlet problems on [-R, R]^(n-1) x [0, R] for a
    schedule of radii and record their mutual deviations on |x| <= compact.

    :param mode: ``fixed`` uses the given b_n; ``two_pass`` estimates b_n on
                 the smallest radius from a solve with b_n = 0 and reuses it
    :returns: per-radius fields, b_n, deviation table and sandwich-bound reports
    """
    radii = [float(R) for R in radii]
    if not radii or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ArgumentError(f'Radii must be strictly increasing, got {radii}')
    if f.R0 > 0 and radii[0] < 4 * f.R0:
        raise ArgumentError(f'Smallest radius {radii[0]} is below 4 R0 = {4 * f.R0}')
    if compact > radii[0] / 2:
        raise ArgumentError(f'Compact radius {compact} must not exceed half the smallest radius')
    if mode not in ('fixed', 'two_pass'):
        raise ArgumentError(f'Unknown b_n mode {mode}')
    _check_quadratic(q)
    dim = q.dim
    result = ScheduleResult()
    result.b_n = float(b_n)
    if mode == 'two_pass':
        R = radii[0]
        grid = build_half_grid(dim, R, R, spacing_for(R, cells, h_max))
        literal = solve_ma_dirichlet(grid, f, truncation_boundary_data(q, 0.0, R), config)
        result.b_n = _fitted_normal_slope(literal, q, R)
        logging.info(f'Estimated b_n = {result.b_n:.6g} on R = {R}')
    consecutive = 0
    for R in radii:
        h = spacing_for(R, cells, h_max)
        grid = build_half_grid(dim, R, R, h)
        logging.info(f'Solving truncation R = {R} with h = {h} ({grid.size} nodes)')
        try:
            field = solve_ma_dirichlet(grid, f, truncation_boundary_data(q, result.b_n, R), config)
        except (NonConvergenceError, LinearSolverError) as ex:
            logging.warning(f'Truncation R = {R} failed: {ex}')
            result.failures.append({'R': R, 'error': str(ex)})
            consecutive += 1
            if consecutive >= 2:
                raise NonConvergenceError(f'Two consecutive radii failed, last at R = {R}: {ex}',
                                          getattr(ex, 'iterate', None)) from ex
            continue
        consecutive = 0
        result.fields[R] = field
        result.b_n_estimates[R] = _fitted_normal_slope(field, q, R)
        report = sandwich_check(field, q, f.Lam)
        result.bounds[R] = report
        if not report.passed:
            logging.warning(f'Sandwich bounds violated on R = {R}: {report.metrics}')
    solved = result.radii
    for small, large in zip(solved, solved[1:]):
        coarse = result.fields[small] if result.fields[small].grid.h >= result.fields[large].grid.h \
            else result.fields[large]
        points = coarse.grid.points()
        points = points[np.linalg.norm(points, axis=-1) <= compact]
        gap = np.abs(result.fields[small].interpolate(points) - result.fields[large].interpolate(points))
        result.deviations.append({'R': small, 'R_next': large, 'deviation': float(np.max(gap))})
    return result


def liouville_test(p: QuadraticData, R: float = 8.0, h: float = 0.125,
                   config: Optional[SolverConfig] = None, tolerance: float = 1e-8) -> CheckReport:
    """Solve det D²u = 1 with data p on the truncation and measure sup |u − p|."""
    grid = build_half_grid(p.dim, R, R, h)
    u = solve_ma_dirichlet(grid, constant_source(1.0, p.dim), p.evaluate, config)
    deviation = (u - ScalarField.from_function(grid, p.evaluate)).sup_norm()
    return CheckReport('liouville', deviation <= tolerance, deviation=deviation,
                       det=float(np.linalg.det(p.A)), iterations=u.meta['iterations'])


def _decay_stage(name: str, fit: DecayFit, expected: float, window: float) -> Dict[str, Any]:
    if fit.status == 'exact-zero':
        status = 'pass'
    elif fit.status == 'fit':
        status = 'pass' if abs(fit.exponent - expected) <= window else 'fail'
    else:
        status = 'fail'
    metrics = fit.to_dict()
    metrics.update(expected=expected, window=window)
    return {'name': name, 'status': status, 'metrics': metrics}


def full_pipeline(f: SourceTerm, q: QuadraticData, radii: Sequence[float],
                  levels: Sequence[float] = (4.0, 8.0, 16.0, 32.0), cells: int = 64,
                  h_max: float = 0.125, config: Optional[SolverConfig] = None,
                  floor: float = 1e-7) -> CheckReport:
    """
    Expanding-domain solve followed by the asymptotic analysis of the
    largest truncation: quadratic fit, decay rates of the residual and its
    derivatives, sandwich bounds and section normalization.
    """
    dim = q.dim
    stages: List[Dict[str, Any]] = []
    state: Dict[str, Any] = {}

    def stage(name: str, func: Callable[[], Dict[str, Any]]) -> bool:
        try:
            stages.append(func())
        except (ValueError, RuntimeError, IndexError) as ex:
            logging.warning(f'Pipeline stage {name} failed: {ex}')
            stages.append({'name': name, 'status': 'error', 'metrics': {'error': str(ex)}})
            return False
        return True

    def skip(names: Sequence[str], reason: str) -> None:
        for name in names:
            stages.append({'name': name, 'status': 'skipped', 'metrics': {'reason': reason}})

    def solve() -> Dict[str, Any]:
        schedule = expanding_domain_solve(f, q, radii, 'two_pass', cells=cells, h_max=h_max,
                                          config=config)
        if not schedule.fields:
            raise NonConvergenceError(f'No truncation radius was solved: {schedule.failures}')
        state['schedule'] = schedule
        return {'name': 'schedule', 'status': 'pass' if not schedule.failures else 'fail',
                'metrics': schedule.to_dict()}

    decays = ('ray-decay', 'bottom-decay', 'gradient-decay', 'hessian-decay')
    if not stage('schedule', solve):
        skip(('sandwich', 'asymptote') + decays + ('bottom-gradient', 'normalization'),
             'schedule failed')
        return CheckReport('pipeline', False, b_n=None, stages=stages)
    schedule = state['schedule']
    stages.append({'name': 'sandwich',
                   'status': 'pass' if all(r.passed for r in schedule.bounds.values()) else 'fail',
                   'metrics': {str(R): r.metrics for R, r in schedule.bounds.items()}})
    u = schedule.largest()
    R = schedule.radii[-1]
    h = u.grid.h

    def asymptote() -> Dict[str, Any]:
        state['fitted'] = fit_quadratic_asymptote(
            u, annulus_mask(u.grid, R / 4, R / 2), constrain_bottom=True,
            boundary=q.bottom_restriction(), kernel_term=True)
        return {'name': 'asymptote', 'status': 'pass', 'metrics': state['fitted'].to_dict()}

    if stage('asymptote', asymptote):
        fitted = state['fitted']
        V = residual_field(u, fitted)
        span = (2.0, max(4.0, R / 4))
        stage('ray-decay', lambda: _decay_stage(
            'ray-decay', decay_exponent(V, 'ray', span, snap=True, floor=floor), 1.0 - dim, 0.3))
        stage('bottom-decay', lambda: _decay_stage(
            'bottom-decay', decay_exponent(V, 'bottom', span, floor=floor / h), -float(dim), 0.3))
        stage('gradient-decay', lambda: _decay_stage(
            'gradient-decay', derivative_decay(u, fitted, 1, span, floor=floor / h), -float(dim), 0.4))
        stage('hessian-decay', lambda: _decay_stage(
            'hessian-decay', derivative_decay(u, fitted, 2, span, floor=floor / h ** 2), -dim - 1.0, 0.5))
    else:
        skip(decays, 'asymptote failed')

    def gradient() -> Dict[str, Any]:
        report = bottom_gradient_check(u, f.Lam)
        return {'name': 'bottom-gradient', 'status': 'pass' if report.passed else 'fail',
                'metrics': report.metrics}

    def normalization() -> Dict[str, Any]:
        geometry, report = normalization_iteration(u, levels)
        metrics = dict(report.metrics)
        metrics['T'] = [g.T.tolist() for g in geometry]
        return {'name': 'normalization', 'status': 'pass' if report.passed else 'fail',
                'metrics': metrics}

    stage('bottom-gradient', gradient)
    stage('normalization', normalization)
    passed = all(s['status'] == 'pass' for s in stages)
    return CheckReport('pipeline', passed, b_n=schedule.b_n, stages=stages)
