import enum
import logging
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
import scipy.sparse

from halfma.base import (ArgumentError, BarrierSpec, CheckReport, CoefficientError,
                         LinearSolverError)
from halfma.const import LINEAR_ACCEPT_RTOL, LINEAR_RTOL
from halfma.grid import HalfGrid, ScalarField, build_half_grid
from halfma.oracles import barrier_value, barrier_w, poisson_rate
from halfma.stencil import assemble_operator, solve_sparse
from halfma.utils import half_sphere_directions, loglog_slope

BoundaryValue = Union[float, Callable[[np.ndarray], np.ndarray]]


class RegionClass(enum.IntEnum):
    INTERIOR = 0
    BOTTOM = 1
    OUTER = 2
    INNER = 3
    MASKED = 4


def clip_eigenvalues(a: np.ndarray, lam: float, Lam: float) -> np.ndarray:
    w, V = np.linalg.eigh(a)
    w = np.clip(w, lam, Lam)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


class CoefficientField(object):
    """
    Symmetric coefficient matrices a(x) with λI <= a <= ΛI

    :param func: vectorized evaluator, points (N, dim) -> matrices (N, dim, dim)
    :param s: decay rate of |a(x) − I| outside B_R0, if known
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], dim: int, lam: float, Lam: float,
                 s: Optional[float] = None, R0: float = 1.0) -> None:
        if not 0 < lam <= Lam:
            raise ArgumentError(f'Invalid ellipticity bounds lam={lam}, Lam={Lam}')
        self.func = func
        self.dim = dim
        self.lam = lam
        self.Lam = Lam
        self.s = s
        self.R0 = R0

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        a = np.asarray(self.func(points), dtype=float)
        return np.broadcast_to(a, points.shape[:-1] + (self.dim, self.dim))

    def check(self, points: np.ndarray) -> np.ndarray:
        """Evaluate and verify symmetry and the ellipticity bounds at every point."""
        a = self.evaluate(points)
        asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)), axis=(-1, -2))
        w = np.linalg.eigvalsh(a)
        bad = (asym > 1e-12) | (w[..., 0] < self.lam - 1e-12) | (w[..., -1] > self.Lam + 1e-12)
        if np.any(bad):
            first = int(np.flatnonzero(bad.reshape(-1))[0])
            node = tuple(np.asarray(points).reshape(-1, self.dim)[first].tolist())
            raise CoefficientError(f'Coefficients violate symmetry or [{self.lam}, {self.Lam}] '
                                   f'ellipticity at x={node}', node=node)
        return a

    def __repr__(self) -> str:
        return f'<CoefficientField dim={self.dim} lam={self.lam} Lam={self.Lam} s={self.s}>'


def identity_coefficients(dim: int = 2) -> CoefficientField:
    return CoefficientField(lambda x: np.eye(dim), dim, 1.0, 1.0, s=np.inf)


def random_coefficients(rng: np.random.Generator, dim: int = 2, s: float = 0.5, lam: float = 0.5,
                        Lam: float = 2.0, R0: float = 1.0, frequency: float = 1.0) -> CoefficientField:
    """
    Random field a = I + max(|x|, R0)^(-s) E(x/max(|x|, R0)) with |E_ij| <= 1/dim,
    eigenvalues clipped to [lam, Lam]. Outside B_R0 the perturbation depends on the
    direction only.
    """
    amplitude = rng.uniform(-1.0, 1.0, (dim, dim))
    omega = rng.normal(scale=frequency, size=(dim, dim, dim))
    phase = rng.uniform(0.0, 2 * np.pi, (dim, dim))

    def func(x: np.ndarray) -> np.ndarray:
        r = np.maximum(np.linalg.norm(x, axis=-1), R0)
        y = x / r[..., None]
        E = amplitude * np.cos(np.einsum('...k,ijk->...ij', y, omega) + phase) / dim
        E = 0.5 * (E + np.swapaxes(E, -1, -2))
        return clip_eigenvalues(np.eye(dim) + r[..., None, None] ** (-s) * E, lam, Lam)
    return CoefficientField(func, dim, lam, Lam, s=s, R0=R0)


class ExteriorRegion(object):
    """
    Grid nodes with |x| >= R0 (and |x| <= outer_radius when given). Nodes
    whose 3^n stencil touches an excluded node form the inner or outer frontier.
    """

    def __init__(self, grid: HalfGrid, R0: float, outer_radius: Optional[float] = None) -> None:
        if R0 < 0 or (outer_radius is not None and outer_radius <= R0):
            raise ArgumentError(f'Invalid exclusion radii R0={R0}, outer={outer_radius}')
        self.grid = grid
        self.R0 = R0
        self.outer_radius = outer_radius
        radius = grid.radius()
        inside = radius < R0
        beyond = radius > outer_radius if outer_radius is not None else np.zeros(grid.shape, bool)
        classes = np.full(grid.shape, int(RegionClass.INTERIOR), dtype=np.int8)
        core = tuple(slice(1, -1) for _ in range(grid.dim))
        near_inside = np.zeros(grid.shape, bool)
        near_beyond = np.zeros(grid.shape, bool)
        for offset in np.ndindex(*(3,) * grid.dim):
            shifted = tuple(slice(o, n - 2 + o) for o, n in zip(offset, grid.shape))
            near_inside[core] |= inside[shifted]
            near_beyond[core] |= beyond[shifted]
        classes[near_beyond] = int(RegionClass.OUTER)
        classes[near_inside] = int(RegionClass.INNER)
        classes[grid.outer_mask()] = int(RegionClass.OUTER)
        classes[grid.bottom_mask()] = int(RegionClass.BOTTOM)
        classes[inside | beyond] = int(RegionClass.MASKED)
        classes.setflags(write=False)
        self.classes = classes

    def mask(self, kind: RegionClass) -> np.ndarray:
        return self.classes == kind

    @property
    def active(self) -> np.ndarray:
        return self.classes != RegionClass.MASKED

    def __repr__(self) -> str:
        counts = {kind.name.lower(): int(np.sum(self.classes == kind)) for kind in RegionClass}
        return f'<ExteriorRegion R0={self.R0} outer={self.outer_radius} {counts}>'


class LinearSystem(object):
    def __init__(self, matrix: scipy.sparse.csr_matrix, region: ExteriorRegion) -> None:
        self.matrix = matrix
        self.region = region


def assemble_nondivergence(region: ExteriorRegion, coeffs: CoefficientField) -> LinearSystem:
    """
    Sparse system for a_ij D_ij u = 0 at interior nodes with identity
    (Dirichlet) rows on every boundary class and on masked nodes.
    """
    grid = region.grid
    interior = region.mask(RegionClass.INTERIOR)
    nodes = np.flatnonzero(interior)
    a = coeffs.check(grid.points()[nodes])
    matrix = assemble_operator(grid.shape, grid.h, nodes, a)
    dirichlet = (~interior).reshape(-1).astype(float)
    return LinearSystem((matrix + scipy.sparse.diags(dirichlet)).tocsr(), region)


def _boundary_data(region: ExteriorRegion, data) -> np.ndarray:
    grid = region.grid
    points = grid.points()
    values = np.zeros(grid.size)
    if not isinstance(data, dict):
        data = {'bottom': data, 'outer': data, 'inner': data}
    for kind in (RegionClass.BOTTOM, RegionClass.OUTER, RegionClass.INNER):
        nodes = np.flatnonzero(region.mask(kind))
        if not len(nodes):
            continue
        if kind.name.lower() not in data:
            raise ArgumentError(f'No boundary data for the {kind.name.lower()} nodes')
        value = data[kind.name.lower()]
        values[nodes] = value(points[nodes]) if callable(value) else float(value)
    return values


def solve_linear_dirichlet(region: ExteriorRegion, coeffs: CoefficientField,
                           data: Union[BoundaryValue, Dict[str, BoundaryValue]]) -> ScalarField:
    """
    Solve a_ij D_ij u = 0 with Dirichlet data

    :param region: exterior region with its node classes
    :param coeffs: coefficient field
    :param data: one value/evaluator for all boundary nodes, or a dict keyed
                 by ``bottom``, ``outer`` and ``inner``
    :returns: the solution; masked nodes hold 0
    """
    system = assemble_nondivergence(region, coeffs)
    rhs = _boundary_data(region, data)
    try:
        solution, residual = solve_sparse(system.matrix, rhs, LINEAR_RTOL,
                                          accept=LINEAR_ACCEPT_RTOL)
    except LinearSolverError as ex:
        raise LinearSolverError(f'Linear Dirichlet solve failed: {ex}', ex.residual) from ex
    return ScalarField(region.grid, solution, meta={'residual': residual})


def barrier_operator(coeffs: CoefficientField, spec: BarrierSpec, points: np.ndarray) -> np.ndarray:
    _, _, hess, _ = barrier_w(points, spec)
    return np.einsum('...ij,...ij->...', coeffs.evaluate(points), hess)


def barrier_supersolution_check(coeffs: CoefficientField, spec: BarrierSpec,
                                sample: np.ndarray) -> CheckReport:
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    radius = np.linalg.norm(sample, axis=-1)
    if np.any(radius < spec.R1) or np.any(sample[:, -1] <= 0):
        raise ArgumentError(f'Barrier samples must satisfy |x| >= R1={spec.R1} and x_n > 0')
    values = barrier_operator(coeffs, spec, sample)
    worst = int(np.argmax(values))
    return CheckReport('barrier', bool(values[worst] <= 1e-12), max_value=float(values[worst]),
                       worst_point=sample[worst].tolist(), samples=len(sample), R1=spec.R1)


def barrier_radius_sweep(coeffs: CoefficientField, spec: BarrierSpec, r_min: float, r_max: float,
                         n_radii: int = 160, n_angles: int = 64) -> CheckReport:
    """
    Sample a_ij D_ij w on spheres of geometrically spaced radii and report
    the smallest radius beyond which every sample is non-positive.
    """
    radii = np.geomspace(r_min, r_max, n_radii)
    directions = half_sphere_directions(spec.dim, n_angles)
    worst = np.array([np.max(barrier_operator(coeffs, spec, r * directions)) for r in radii])
    failing = np.flatnonzero(worst > 0)
    if not len(failing):
        empirical = float(radii[0])
    elif failing[-1] == len(radii) - 1:
        empirical = float('inf')
    else:
        empirical = float(radii[failing[-1] + 1])
    return CheckReport('barrier-sweep', np.isfinite(empirical), R1=empirical,
                       radii=radii.tolist(), worst=worst.tolist())


def barrier_laplacian_study(spec: BarrierSpec, points: np.ndarray,
                            spacings: Sequence[float] = (0.1, 0.05, 0.025)) -> CheckReport:
    """Second-difference Laplacian of w against the closed form; the error must fall at order 2."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(points[:, -1] <= max(spacings)):
        raise ArgumentError('Stencil points must stay above the bottom')
    _, _, _, exact = barrier_w(points, spec)
    errors = []
    for h in spacings:
        total = -2 * spec.dim * barrier_value(points, spec)
        for a in range(spec.dim):
            step = np.zeros(spec.dim)
            step[a] = h
            total = total + barrier_value(points + step, spec) + barrier_value(points - step, spec)
        errors.append(float(np.max(np.abs(total / h ** 2 - exact))))
    order, _, _ = loglog_slope(spacings, errors)
    return CheckReport('barrier-laplacian', 1.8 <= order <= 2.2, spacings=list(spacings),
                       errors=errors, order=order)


def _arc_points(radius: float, dim: int, count: int) -> np.ndarray:
    return radius * half_sphere_directions(dim, count)


def strict_interior_bound_experiment(coeffs: CoefficientField, R0: float = 1.0,
                                     h: Optional[float] = None, bottom_value: float = 0.5,
                                     arc_samples: int = 64) -> CheckReport:
    """
    Solve on the half annulus R0 <= |x| <= 4R0 with data 1 on both arcs and
    ``bottom_value`` on the bottom; report ε₀ = 1 − max u on |x| = 2R0.
    """
    h = R0 / 8 if h is None else h
    grid = build_half_grid(coeffs.dim, 4 * R0, 4 * R0, h)
    region = ExteriorRegion(grid, R0, outer_radius=4 * R0)
    u = solve_linear_dirichlet(region, coeffs, {'bottom': bottom_value, 'outer': 1.0, 'inner': 1.0})
    arc = u.interpolate(_arc_points(2 * R0, coeffs.dim, arc_samples))
    eps0 = 1.0 - float(np.max(arc))
    logging.debug(f'strict interior bound: eps0 = {eps0:.6g}')
    return CheckReport('strict-interior-bound', eps0 > 1e-10, eps0=eps0,
                       u_min=float(np.min(u.values[region.active])),
                       u_max=float(np.max(u.values[region.active])))


def growth_bound_sweep(coeffs: CoefficientField, eps_values: Sequence[float], R0: float = 1.0,
                       L: float = 8.0, h: float = 0.25, compact: float = 2.0) -> CheckReport:
    """
    Solve with |data| <= 1 on the bottom and the inner arc and 1 + 2ε x_n on
    the outer boundary; u must stay within ±(1 + 2ε x_n).
    """
    grid = build_half_grid(coeffs.dim, L, L, h)
    region = ExteriorRegion(grid, R0)
    points = grid.points()
    active = region.active.reshape(-1)
    near = active & (np.linalg.norm(points, axis=-1) <= compact)
    excess, sup_near = [], []
    for eps in eps_values:
        data = {'bottom': lambda x: np.cos(x[:, 0]), 'inner': -1.0,
                'outer': lambda x, eps=eps: 1.0 + 2 * eps * x[:, -1]}
        u = solve_linear_dirichlet(region, coeffs, data).values.reshape(-1)
        envelope = 1.0 + 2 * eps * points[:, -1]
        excess.append(float(np.max(np.abs(u[active]) - envelope[active])))
        sup_near.append(float(np.max(np.abs(u[near]))))
    return CheckReport('growth-bound', max(excess) <= 1e-10, eps=list(eps_values),
                       excess=excess, sup_near=sup_near)


def limit_at_infinity_experiment(coeffs: CoefficientField, beta: float, schedule: Sequence[float],
                                 h: Optional[float] = None,
                                 bottom: Optional[BoundaryValue] = None,
                                 inner: Optional[BoundaryValue] = None,
                                 arc_samples: int = 64,
                                 check_truncation: bool = True) -> CheckReport:
    """
    Bounded solution with far-field value β on a truncation of outer radius
    2·max(schedule); reports sup |u − β| on each sphere of the schedule.
    """
    schedule = [float(r) for r in schedule]
    if len(schedule) < 2 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ArgumentError(f'Radius schedule must be strictly increasing, got {schedule}')
    if schedule[0] <= coeffs.R0:
        raise ArgumentError(f'Schedule must start beyond R0={coeffs.R0}')
    outer = 2 * schedule[-1]
    h = outer / 64 if h is None else h
    if bottom is None:
        bottom = lambda x: beta + 1.0 / (1.0 + np.linalg.norm(x[:, :-1], axis=-1))  # noqa: E731
    data = {'bottom': bottom, 'inner': beta + 1.0 if inner is None else inner, 'outer': beta}

    def solve(radius: float) -> ScalarField:
        grid = build_half_grid(coeffs.dim, radius, radius, h)
        return solve_linear_dirichlet(ExteriorRegion(grid, coeffs.R0, outer_radius=radius), coeffs, data)

    u = solve(outer)
    deviations = [float(np.max(np.abs(u.interpolate(_arc_points(r, coeffs.dim, arc_samples)) - beta)))
                  for r in schedule]
    monotone = all(b <= 1.1 * a for a, b in zip(deviations, deviations[1:]))
    metrics = {'radii': schedule, 'deviations': deviations, 'outer_radius': outer}
    if check_truncation:
        wide = solve(2 * outer)
        points = u.grid.points()
        near = (np.linalg.norm(points, axis=-1) <= schedule[-1]) & (
            np.linalg.norm(points, axis=-1) >= coeffs.R0)
        change = np.abs(wide.interpolate(points[near]) - u.values.reshape(-1)[near])
        metrics['truncation_change'] = float(np.max(change))
    return CheckReport('limit-at-infinity', monotone, **metrics)


def poisson_kernel_study(spacings: Sequence[float], dim: int = 2, R0: float = 1.0,
                         R_out: float = 8.0) -> CheckReport:
    """Convergence of the Laplace solve towards x_n/|x|^n on R0 <= |x| <= R_out."""
    errors = []
    coeffs = identity_coefficients(dim)
    kernel = lambda x: poisson_rate(x, dim)  # noqa: E731
    for h in spacings:
        grid = build_half_grid(dim, R_out, R_out, h)
        region = ExteriorRegion(grid, R0, outer_radius=R_out)
        u = solve_linear_dirichlet(region, coeffs, kernel)
        active = region.active.reshape(-1)
        exact = kernel(grid.points()[active])
        errors.append(float(np.max(np.abs(u.values.reshape(-1)[active] - exact))))
    order, _, _ = loglog_slope(spacings, errors)
    return CheckReport('poisson-kernel', 1.7 <= order <= 2.3, spacings=list(spacings),
                       errors=errors, order=order)
