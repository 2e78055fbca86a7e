import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.spatial import ConvexHull

from halfma.base import (ArgumentError, CheckReport, DecayFit, DegenerateAnnulusError,
                         DegenerateSectionError, FactorizationError, LevelError, QuadraticData,
                         SolverConfig, SourceTerm, ValidationError)
from halfma.const import TAU, UNDERFLOW
from halfma.grid import HalfGrid, NodeIndex, ScalarField, annulus_mask, build_half_grid
from halfma.monge import constant_source, discrete_hessian, solve_ma_dirichlet
from halfma.utils import loglog_slope

Sampled = Union[ScalarField, Callable[[np.ndarray], np.ndarray]]


def _annulus_samples(field: ScalarField, annulus) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(annulus, np.ndarray) and annulus.dtype == bool:
        mask = annulus.reshape(-1)
        return field.grid.points()[mask], field.values.reshape(-1)[mask]
    index = tuple(np.array(annulus, dtype=int).T)
    if not len(annulus):
        raise DegenerateAnnulusError('The annulus holds no nodes')
    flat = np.ravel_multi_index(index, field.grid.shape)
    return field.grid.points()[flat], field.values.reshape(-1)[flat]


def _quadratic_columns(points: np.ndarray) -> List[np.ndarray]:
    dim = points.shape[-1]
    columns = []
    for i in range(dim):
        for j in range(i, dim):
            columns.append(0.5 * points[:, i] ** 2 if i == j else points[:, i] * points[:, j])
    return columns


def _bottom_polynomial(field: ScalarField) -> QuadraticData:
    grid = field.grid
    mask = grid.bottom_mask().reshape(-1)
    tangential = grid.points()[mask][:, :-1]
    values = field.values.reshape(-1)[mask]
    design = np.stack(_quadratic_columns(tangential) + [tangential[:, i] for i in range(grid.dim - 1)]
                      + [np.ones(len(values))], axis=-1)
    coef = np.linalg.lstsq(design, values, rcond=None)[0]
    return _assemble_quadratic(grid.dim - 1, coef)


def _assemble_quadratic(dim: int, coef: np.ndarray) -> QuadraticData:
    A = np.zeros((dim, dim))
    k = 0
    for i in range(dim):
        for j in range(i, dim):
            A[i, j] = A[j, i] = coef[k]
            k += 1
    return QuadraticData(A, coef[k:k + dim], coef[k + dim])


def fit_quadratic_asymptote(field: ScalarField, annulus, constrain_bottom: bool = False,
                            boundary: Optional[QuadraticData] = None,
                            kernel_term: bool = False) -> QuadraticData:
    """
    Least-squares fit of ½xᵀAx + b·x + c to the field over an annulus

    :param field: node values
    :param annulus: node list or boolean mask
    :param constrain_bottom: pin the tangential block, b′ and c to the bottom polynomial
    :param boundary: bottom polynomial in x′; fitted from the bottom row when omitted
    :param kernel_term: also regress on x_n/|x|^n so the decay profile does not leak into q
    :returns: fitted quadratic
    """
    points, values = _annulus_samples(field, annulus)
    dim = field.grid.dim
    xn = points[:, -1]
    if constrain_bottom:
        bottom = boundary if boundary is not None else _bottom_polynomial(field)
        if bottom.dim != dim - 1:
            raise ValidationError(f'Bottom polynomial must have dimension {dim - 1}')
        target = values - bottom.evaluate(points[:, :-1])
        columns = [points[:, i] * xn for i in range(dim - 1)] + [0.5 * xn ** 2, xn]
    else:
        target = values
        columns = _quadratic_columns(points) + [points[:, i] for i in range(dim)] + [np.ones(len(values))]
    free = len(columns)
    if kernel_term:
        columns.append(xn / np.linalg.norm(points, axis=-1) ** dim)
    if len(values) < 3 * free:
        raise DegenerateAnnulusError(f'{len(values)} nodes cannot determine {free} coefficients')
    design = np.stack(columns, axis=-1)
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateAnnulusError(f'Annulus design matrix has rank {rank} < {design.shape[1]}')
    if not constrain_bottom:
        return _assemble_quadratic(dim, coef[:free])
    A = np.zeros((dim, dim))
    A[:-1, :-1] = bottom.A
    A[:-1, -1] = A[-1, :-1] = coef[:dim - 1]
    A[-1, -1] = coef[dim - 1]
    b = np.append(bottom.b, coef[dim])
    return QuadraticData(A, b, bottom.c)


def residual_field(field: ScalarField, q: QuadraticData) -> ScalarField:
    return field - ScalarField.from_function(field.grid, q.evaluate)


def _unit_ray(direction: Optional[Sequence[float]], dim: int) -> np.ndarray:
    if direction is None:
        omega = np.zeros(dim)
        omega[-1] = 1.0
        return omega
    omega = np.asarray(direction, dtype=float)
    if omega.shape != (dim,) or omega[-1] <= 0:
        raise ArgumentError(f'Ray direction {direction} must point into the upper half space')
    return omega / np.linalg.norm(omega)


def _check_range(r_range: Tuple[float, float], n_samples: int) -> np.ndarray:
    r_min, r_max = r_range
    if not 0 < r_min < r_max:
        raise ArgumentError(f'Invalid radius range {r_range}')
    if n_samples < 5:
        raise ArgumentError('A decay fit needs at least five radii')
    return np.geomspace(r_min, r_max, n_samples)


def _snapped(grid: HalfGrid, points: np.ndarray) -> List[NodeIndex]:
    seen, nodes = set(), []
    for point in points:
        node = grid.nearest_node(point)
        if node not in seen and node[-1] > 0:
            seen.add(node)
            nodes.append(node)
    return nodes


def _fit_samples(radii: np.ndarray, samples: np.ndarray, floor: float, mode: str,
                 r_range: Tuple[float, float], min_samples: int = 5) -> DecayFit:
    small = samples <= floor
    if np.all(small):
        return DecayFit(float('-inf'), 0.0, 0.0, 'exact-zero', radii, samples, mode, r_range)
    if np.any(small):
        return DecayFit(float('nan'), float('nan'), float('nan'), 'underflow', radii, samples,
                        mode, r_range)
    if len(radii) < min_samples:
        raise ArgumentError(f'Only {len(radii)} distinct sample radii, the fit needs {min_samples}')
    exponent, constant, residual = loglog_slope(radii, samples)
    return DecayFit(exponent, constant, residual, 'fit', radii, samples, mode, r_range)


def decay_exponent(V: Sampled, mode: str = 'ray', r_range: Tuple[float, float] = (2.0, 8.0),
                   direction: Optional[Sequence[float]] = None, n_samples: int = 12,
                   floor: float = UNDERFLOW, snap: bool = False, h: Optional[float] = None,
                   dim: Optional[int] = None) -> DecayFit:
    """
    Log-log decay rate of |V| along a ray (``ray``), of the largest |V| over
    the node shells between consecutive sample radii (``annulus``, fields
    only) or of V(x′, h)/h over spheres |x′| = r just above the bottom
    (``bottom``).

    V is a field (sampled by interpolation, or at the nearest nodes with
    ``snap``) or a vectorized evaluator, in which case ``dim`` is needed
    and ``h`` sets the bottom offset.
    """
    radii = _check_range(r_range, n_samples)
    if isinstance(V, ScalarField):
        dim = V.grid.dim
        h = V.grid.h
        sample = V.interpolate
    else:
        if dim is None:
            raise ArgumentError('The dimension is needed for evaluator input')
        h = 1e-4 if h is None else h
        sample = V
    if mode == 'ray':
        omega = _unit_ray(direction, dim)
        points = radii[:, None] * omega
        if snap and isinstance(V, ScalarField):
            nodes = _snapped(V.grid, points)
            points = np.array([V.grid.coordinates(node) for node in nodes])
            radii = np.linalg.norm(points, axis=-1)
        values = np.abs(np.asarray(sample(points), dtype=float))
    elif mode == 'annulus':
        if not isinstance(V, ScalarField):
            raise ArgumentError('Annulus sampling needs a field')
        magnitude = np.abs(V.values)
        shells, values = [], []
        for r_in, r_out in zip(radii, radii[1:]):
            mask = annulus_mask(V.grid, r_in, r_out)
            if np.any(mask):
                shells.append(r_in)
                values.append(float(np.max(magnitude[mask])))
        radii, values = np.array(shells), np.array(values)
    elif mode == 'bottom':
        values = []
        for r in radii:
            if dim == 2:
                tangential = np.array([[-r], [r]])
            else:
                theta = 2 * np.pi * np.arange(16) / 16
                tangential = r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            points = np.hstack([tangential, np.full((len(tangential), 1), h)])
            values.append(float(np.max(np.abs(sample(points)))) / h)
        values = np.array(values)
    else:
        raise ArgumentError(f'Unknown decay mode {mode}')
    return _fit_samples(np.asarray(radii), values, floor, mode, tuple(r_range))


def derivative_decay(field: ScalarField, q: QuadraticData, k: int,
                     r_range: Tuple[float, float] = (2.0, 8.0),
                     direction: Optional[Sequence[float]] = None, n_samples: int = 12,
                     floor: float = UNDERFLOW) -> DecayFit:
    """
    Decay rate of |D^k(u − q)| along a ray, k = 1 (gradient norm) or
    k = 2 (spectral norm of the Hessian), sampled at the nodes nearest the ray.
    """
    if k not in (1, 2):
        raise ArgumentError(f'Derivative order {k} is not supported, use 1 or 2')
    V = residual_field(field, q)
    grid = field.grid
    omega = _unit_ray(direction, grid.dim)
    radii = _check_range(r_range, n_samples)
    interior = grid.interior_mask()
    nodes = [node for node in _snapped(grid, radii[:, None] * omega) if interior[node]]
    magnitudes = []
    for node in nodes:
        if k == 1:
            grad = []
            for a in range(grid.dim):
                up, down = list(node), list(node)
                up[a] += 1
                down[a] -= 1
                grad.append((V.values[tuple(up)] - V.values[tuple(down)]) / (2 * grid.h))
            magnitudes.append(float(np.linalg.norm(grad)))
        else:
            magnitudes.append(float(np.linalg.norm(discrete_hessian(V, node), 2)))
    node_radii = np.array([np.linalg.norm(grid.coordinates(node)) for node in nodes])
    return _fit_samples(node_radii, np.array(magnitudes), floor, 'ray', tuple(r_range))


class Section(object):
    """Sub-level set {u < M} with its interpolated boundary crossings."""

    def __init__(self, grid: HalfGrid, level: float, mask: np.ndarray, boundary_points: np.ndarray) -> None:
        self.grid = grid
        self.level = level
        self.mask = mask
        self.boundary_points = boundary_points

    def node_points(self) -> np.ndarray:
        return self.grid.points()[self.mask.reshape(-1)]

    def __repr__(self) -> str:
        return f'<Section M={self.level}: {int(self.mask.sum())} nodes, {len(self.boundary_points)} crossings>'


def _crossing(v_prev: Optional[float], v0: float, v1: float, v_next: Optional[float], M: float) -> float:
    """Position t in [0, 1] where the parabola through three consecutive nodes crosses M."""
    if v_prev is not None:
        alpha = 0.5 * (v1 + v_prev - 2 * v0)
        beta = 0.5 * (v1 - v_prev)
    else:
        alpha = 0.5 * (v_next - 2 * v1 + v0)
        beta = v1 - v0 - alpha
    gamma = v0 - M
    linear = (M - v0) / (v1 - v0)
    if abs(alpha) <= 1e-14 * max(abs(v0), abs(v1), 1.0):
        return linear
    disc = beta * beta - 4 * alpha * gamma
    if disc < 0:
        return linear
    root = math.sqrt(disc)
    # cancellation-free pair of roots
    qq = -0.5 * (beta + math.copysign(root, beta))
    candidates = [qq / alpha] + ([gamma / qq] if qq != 0 else [])
    inside = [t for t in candidates if -1e-12 <= t <= 1 + 1e-12]
    if not inside:
        return linear
    return min(max(min(inside, key=lambda t: abs(t - linear)), 0.0), 1.0)


def extract_section(field: ScalarField, M: float) -> Section:
    """
    Section {u < M} on the grid together with edge crossings of the level M,
    located by quadratic interpolation along grid lines.
    """
    grid = field.grid
    values = field.values
    mask = values < M
    if not mask.any():
        raise LevelError(f'Level M={M} is not above the minimum {float(values.min()):.6g}')
    if np.any(mask & grid.outer_mask()):
        raise LevelError(f'Section at level M={M} reaches the truncation boundary')
    points = []
    for axis in range(grid.dim):
        moved = np.moveaxis(values, axis, -1)
        inside = moved < M
        length = moved.shape[-1]
        for row in np.argwhere(inside[..., :-1] != inside[..., 1:]):
            rest, k = tuple(row[:-1]), int(row[-1])
            line = moved[rest]
            v_prev = float(line[k - 1]) if k >= 1 else None
            v_next = float(line[k + 2]) if v_prev is None and k + 2 < length else None
            if v_prev is None and v_next is None:
                t = (M - line[k]) / (line[k + 1] - line[k])
            else:
                t = _crossing(v_prev, float(line[k]), float(line[k + 1]), v_next, M)
            index = list(rest)
            index.insert(axis, k)
            point = grid.coordinates(index)
            point[axis] += t * grid.h
            points.append(point)
    return Section(grid, float(M), mask, np.array(points))


def section_is_convex(section: Section, tol: Optional[float] = None) -> bool:
    tol = section.grid.h if tol is None else tol
    try:
        hull = ConvexHull(section.boundary_points)
    except (RuntimeError, ValueError) as ex:
        raise DegenerateSectionError(f'Section at level {section.level} has a degenerate hull') from ex
    distance = section.node_points() @ hull.equations[:, :-1].T + hull.equations[:, -1]
    return bool(np.max(distance) <= tol)


def ellipsoid_fit(points: np.ndarray) -> np.ndarray:
    """
    Matrix H with xᵀHx = 1 fitted to half-ellipsoid boundary points. The
    points are completed by their reflection through the origin first.

    :param points: array (K, dim), K >= dim(dim+1)/2
    :returns: symmetric positive definite H
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dim = points.shape[-1]
    unknowns = dim * (dim + 1) // 2
    if len(points) < unknowns:
        raise DegenerateSectionError(f'{len(points)} points cannot determine an ellipsoid in {dim}D')
    full = np.vstack([points, -points])
    columns = []
    for i in range(dim):
        for j in range(i, dim):
            columns.append(full[:, i] * full[:, j] * (1.0 if i == j else 2.0))
    design = np.stack(columns, axis=-1)
    coef, _, rank, _ = np.linalg.lstsq(design, np.ones(len(full)), rcond=None)
    if rank < unknowns:
        raise DegenerateSectionError(f'Ellipsoid design matrix has rank {rank} < {unknowns}')
    H = np.zeros((dim, dim))
    k = 0
    for i in range(dim):
        for j in range(i, dim):
            H[i, j] = H[j, i] = coef[k]
            k += 1
    w = np.linalg.eigvalsh(H)
    if w[0] <= 1e-12 * max(abs(w[-1]), 1e-300):
        raise DegenerateSectionError(f'Fitted quadric is not an ellipsoid, eigenvalues {w.tolist()}')
    return H


def section_hessian(field: ScalarField, M: float) -> np.ndarray:
    """Ellipsoid of the section at level M in Hessian units: equals A for ½xᵀAx."""
    return 2 * M * ellipsoid_fit(extract_section(field, M).boundary_points)


def lu_normalize(H: np.ndarray) -> np.ndarray:
    """Upper-triangular T with TᵀT = H."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or not np.allclose(H, H.T, rtol=0, atol=1e-12):
        raise FactorizationError('Only symmetric matrices can be normalized')
    try:
        return scipy.linalg.cholesky(H, lower=False)
    except np.linalg.LinAlgError as ex:
        raise FactorizationError(f'Matrix is not positive definite: {ex}') from ex


class SectionGeometry(object):
    """
    Section at level M with its fitted ellipsoid (Hessian units) and
    normalizing map T. ``slack`` is the smallest sandwich slack against the
    previous level, NaN on the first one; ``envelope`` is the bound
    2^(−3τk/2) that slack is expected to follow.
    """

    def __init__(self, level: float, hessian: np.ndarray, T: np.ndarray, mask: np.ndarray,
                 slack: float = math.nan, tau: float = TAU, k: int = 0) -> None:
        if not mask.any():
            raise DegenerateSectionError(f'Section at level {level} holds no nodes')
        self.level = level
        self.hessian = hessian
        self.T = T
        self.mask = mask
        self.slack = slack
        self.tau = tau
        self.envelope = 2.0 ** (-1.5 * tau * k)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def to_dict(self):
        return {'level': self.level, 'hessian': self.hessian.tolist(), 'T': self.T.tolist(),
                'nodes': self.size, 'slack': self.slack, 'tau': self.tau, 'envelope': self.envelope}

    def __repr__(self) -> str:
        return f'<SectionGeometry M={self.level} T={self.T.tolist()}>'


def section_sandwich_check(field: ScalarField, M: float, M_prime: float, H: np.ndarray,
                           slack: float) -> CheckReport:
    """
    (2M′/M − slack)^½ E ⊂ S_{M′}/√M ⊂ (2M′/M + slack)^½ E with E = {yᵀHy <= 1},
    checked node by node. Also reports the smallest slack that passes.
    """
    if not 0 < M_prime <= M:
        raise ArgumentError(f'Need 0 < M′ <= M, got M′={M_prime}, M={M}')
    grid = field.grid
    values = field.values.reshape(-1)
    if np.any((values < M_prime) & grid.outer_mask().reshape(-1)):
        raise LevelError(f'Section at level {M_prime} reaches the truncation boundary')
    y = grid.points() / math.sqrt(M)
    quad = np.einsum('ki,ij,kj->k', y, np.asarray(H, dtype=float), y)
    ratio = 2 * M_prime / M
    in_section = values < M_prime
    inner = quad <= ratio - slack
    inner_ok = bool(np.all(in_section[inner]))
    outer_ok = bool(np.all(quad[in_section] <= ratio + slack))
    inner_need = float(np.max(ratio - quad[~in_section])) if np.any(~in_section) else -math.inf
    outer_need = float(np.max(quad[in_section] - ratio)) if np.any(in_section) else -math.inf
    return CheckReport('section-sandwich', inner_ok and outer_ok, inner_ok=inner_ok,
                       outer_ok=outer_ok, slack=slack, min_slack=max(inner_need, outer_need))


def normalization_iteration(field: ScalarField, levels: Sequence[float],
                            zero: float = 1e-10) -> Tuple[List[SectionGeometry], CheckReport]:
    """
    Normalizing maps T_k of the sections at the given levels and the
    successive differences ‖T_k − T_{k−1}‖, which must shrink geometrically
    (ratio <= 0.9, at most two exceptions) unless they all vanish.
    """
    geometry: List[SectionGeometry] = []
    for k, M in enumerate(levels):
        try:
            section = extract_section(field, M)
            H = 2 * M * ellipsoid_fit(section.boundary_points)
            slack = math.nan
            if geometry:
                slack = section_sandwich_check(field, M, geometry[-1].level, H, 0.0)['min_slack']
            geometry.append(SectionGeometry(float(M), H, lu_normalize(H), section.mask, slack, k=k))
        except (LevelError, DegenerateSectionError, FactorizationError, ArgumentError) as ex:
            raise type(ex)(f'level {k} (M={M}): {ex}') from ex
    diffs = [float(np.linalg.norm(b.T - a.T, 2)) for a, b in zip(geometry, geometry[1:])]
    violations = sum(1 for a, b in zip(diffs, diffs[1:]) if b > 0.9 * a)
    passed = bool(diffs) and (max(diffs) <= zero or violations <= 2)
    logging.debug(f'Normalization differences: {diffs}')
    return geometry, CheckReport('normalization', passed, levels=[float(M) for M in levels],
                                 differences=diffs, violations=violations)


def apply_affine_rescale(source: Callable[[np.ndarray], np.ndarray], Q: np.ndarray,
                         M: float) -> Callable[[np.ndarray], np.ndarray]:
    """
    x ↦ M² w(Qx/M) for upper-triangular Q with det Q = 1; preserves
    det D² = f up to the change of variables.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError('Rescaling matrix must be square')
    if np.max(np.abs(np.tril(Q, -1))) > 1e-12:
        raise ValidationError('Rescaling matrix must be upper triangular')
    if abs(np.linalg.det(Q) - 1.0) > 1e-10:
        raise ValidationError(f'Rescaling matrix has determinant {np.linalg.det(Q):.12g}, expected 1')
    if not M > 0:
        raise ValidationError('Rescaling factor must be positive')

    def rescaled(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return M * M * np.asarray(source(x @ Q.T / M))
    return rescaled


def xi_comparison_experiment(f: SourceTerm, levels: Sequence[float], h: float = 0.25,
                             factor: float = 2.0, config: Optional[SolverConfig] = None,
                             floor: float = 1e-9) -> CheckReport:
    """
    For each level M: solve u with data ½|x|² on a truncation containing
    S_M, solve ξ with f = 1 on S_M with u's own values outside, and measure
    sup |û − ξ| away from the origin and |Dξ(0)| in rescaled units.
    """
    if len(levels) < 2 or any(M < 4 for M in levels):
        raise ArgumentError('Need at least two levels, all of them >= 4')
    dim = 2
    gap, grad = [], []
    for M in levels:
        # S_M lies inside {½|x|² − (Λ−1)x_n < M}
        extent = (f.Lam - 1) + math.sqrt((f.Lam - 1) ** 2 + 2 * M)
        R = h * math.ceil(factor * extent / h)
        grid = build_half_grid(dim, R, R, h)
        u = solve_ma_dirichlet(grid, f, lambda x: 0.5 * np.sum(x ** 2, axis=-1), config)
        section = u.values < M
        if np.any(section & grid.outer_mask()):
            raise LevelError(f'Section at level {M} reaches the truncation boundary')
        v = solve_ma_dirichlet(grid, constant_source(1.0, dim), u, config, free=section)
        away = grid.radius() >= 1.0
        gap.append(float(np.max(np.abs(u.values - v.values)[away])) / M)
        origin = grid.nearest_node(np.zeros(dim))
        column = v.values[origin[0]]
        normal = (-3 * column[0] + 4 * column[1] - column[2]) / (2 * h)
        row = v.values[:, 0]
        tangential = (row[origin[0] + 1] - row[origin[0] - 1]) / (2 * h)
        grad.append(math.hypot(normal, tangential) / math.sqrt(M))
        logging.info(f'xi comparison at M={M}: gap {gap[-1]:.3e}, |Dxi(0)| {grad[-1]:.3e}')
    levels = [float(M) for M in levels]
    span = (min(levels), max(levels))
    gap_fit = _fit_samples(np.array(levels), np.array(gap), floor / max(levels), 'scaling', span,
                           min_samples=2)
    grad_fit = _fit_samples(np.array(levels), np.array(grad), floor, 'scaling', span, min_samples=2)
    gap_ok = gap_fit.status == 'exact-zero' or (gap_fit.status == 'fit' and gap_fit.exponent <= -0.5 + 0.2)
    grad_ok = grad_fit.status == 'exact-zero' or (grad_fit.status == 'fit' and grad_fit.exponent <= -0.25 + 0.15)
    return CheckReport('xi-comparison', gap_ok and grad_ok, levels=levels, gap=gap, gradient=grad,
                       gap_fit=gap_fit.to_dict(), gradient_fit=grad_fit.to_dict())
