import csv
import logging
import os
from typing import Optional, Sequence, Union

import numpy as np

from halfma.base import (ArgumentError, CheckReport, EllipticityError, Evaluator,
                         NonConvergenceError, QuadraticData, SolverConfig, SourceTerm,
                         StencilError)
from halfma.grid import HalfGrid, NodeClass, ScalarField, classify_node
from halfma.stencil import assemble_operator, hessian_array, interior_slices, solve_sparse

Boundary = Union[Evaluator, ScalarField]


def constant_source(value: float = 1.0, dim: int = 2) -> SourceTerm:
    return SourceTerm(lambda x: np.full(np.shape(x)[:-1], float(value)), R0=0.0,
                      lam=min(value, 1.0), Lam=max(value, 1.0))


def bump_source(amplitude: float, radius: float, dim: int = 2, sampling: str = 'node') -> SourceTerm:
    """f = 1 + amplitude on the open half ball of the given radius, 1 elsewhere."""
    def func(x):
        x = np.asarray(x, dtype=float)
        inside = (np.linalg.norm(x, axis=-1) < radius) & (x[..., -1] > 0)
        return 1.0 + amplitude * inside
    return SourceTerm(func, R0=radius, lam=min(1.0, 1.0 + amplitude),
                      Lam=max(1.0, 1.0 + amplitude), sampling=sampling)


def sample_source(grid: HalfGrid, f: SourceTerm) -> np.ndarray:
    return f.sample(grid.points(), grid.h).reshape(grid.shape)


def _boundary_values(grid: HalfGrid, boundary: Boundary) -> np.ndarray:
    if isinstance(boundary, ScalarField):
        if boundary.grid != grid:
            raise ArgumentError('Boundary field lives on a different grid')
        return np.array(boundary.values)
    return np.asarray(boundary(grid.points()), dtype=float).reshape(grid.shape)


def discrete_hessian(field: ScalarField, node: Sequence[int]) -> np.ndarray:
    """
    Central-difference Hessian at one node

    :param field: node values
    :param node: lattice index of an interior node
    :returns: symmetric dim x dim matrix
    """
    if classify_node(field.grid, node) != NodeClass.INTERIOR:
        raise StencilError(f'Node {tuple(node)} is not interior, the stencil leaves the grid')
    block = field.values[tuple(slice(i - 1, i + 2) for i in node)]
    return hessian_array(block, field.grid.h)[(0,) * field.grid.dim]


def ma_residual(field: ScalarField, f: SourceTerm) -> ScalarField:
    """det D²_h u − f at interior nodes, 0 on the boundary."""
    grid = field.grid
    interior = interior_slices(grid.dim)
    out = np.zeros(grid.shape)
    out[interior] = np.linalg.det(hessian_array(field.values, grid.h)) - sample_source(grid, f)[interior]
    return ScalarField(grid, out)


def convexify(H: np.ndarray, floor: float) -> np.ndarray:
    """Project symmetric matrices onto {min eigenvalue >= floor}; works on stacks."""
    w, V = np.linalg.eigh(H)
    w = np.maximum(w, floor)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def convexified_cofactor(H: np.ndarray, floor: float) -> np.ndarray:
    """Cofactor matrix det(C) C⁻¹ of the convexified Hessians, the Newton linearization."""
    C = convexify(H, floor)
    return np.linalg.det(C)[..., None, None] * np.linalg.inv(C)


def harmonic_extension(grid: HalfGrid, data: np.ndarray, free: np.ndarray,
                       rtol: float) -> np.ndarray:
    """Discrete harmonic function on the free nodes matching ``data`` elsewhere."""
    dim = grid.dim
    nodes = np.flatnonzero(free)
    fixed = np.flatnonzero(~free)
    operator = assemble_operator(grid.shape, grid.h, nodes,
                                 np.broadcast_to(np.eye(dim), (len(nodes), dim, dim)))
    rows = operator[nodes]
    values = np.array(data, dtype=float)
    rhs = -(rows[:, fixed] @ values.reshape(-1)[fixed])
    solution, _ = solve_sparse(rows[:, nodes], rhs, rtol)
    values.reshape(-1)[nodes] = solution
    return values


def _check_ellipticity(values: np.ndarray) -> None:
    if np.any(values < 0):
        raise EllipticityError(f'f is negative at {int(np.sum(values < 0))} nodes')
    if np.all(values <= 0):
        raise EllipticityError('f vanishes on the whole domain')
    if np.any(values == 0):
        logging.warning(f'f vanishes at {int(np.sum(values == 0))} nodes, '
                        'solving in the degenerate regime')


class _IterationLog(object):
    def __init__(self, path: Optional[str]) -> None:
        self.path = path
        if path and (not os.path.exists(path) or os.path.getsize(path) == 0):
            with open(path, 'wt', newline='') as f:
                csv.writer(f).writerow(['iteration', 'residual', 'step'])

    def write(self, iteration: int, residual: float, step: float) -> None:
        logging.debug(f'Newton {iteration}: residual {residual:.3e}, step {step:g}')
        if self.path:
            with open(self.path, 'at', newline='') as f:
                csv.writer(f).writerow([iteration, repr(residual), repr(step)])


def solve_ma_dirichlet(grid: HalfGrid, f: SourceTerm, boundary: Boundary,
                       config: Optional[SolverConfig] = None, init: Optional[ScalarField] = None,
                       free: Optional[np.ndarray] = None) -> ScalarField:
    """
    Damped Newton solve of det D²_h u = f with Dirichlet data

    :param grid: computational grid
    :param f: source term
    :param boundary: evaluator or field providing values on all non-free nodes
    :param config: Newton settings
    :param init: initial iterate; ½|x|² plus a harmonic correction by default
    :param free: node mask of unknowns (grid-interior nodes only); all interior nodes by default
    :returns: converged field, with the residual history in ``meta``
    """
    config = config or SolverConfig()
    h = grid.h
    free_mask = grid.interior_mask()
    if free is not None:
        free_mask = free_mask & np.asarray(free, dtype=bool).reshape(grid.shape)
    if not free_mask.any():
        raise ArgumentError('There are no free nodes to solve for')
    data = _boundary_values(grid, boundary)
    rhs = sample_source(grid, f)[free_mask]
    _check_ellipticity(rhs)
    if init is None:
        quadratic = 0.5 * np.sum(grid.points() ** 2, axis=-1).reshape(grid.shape)
        values = quadratic + harmonic_extension(grid, data - quadratic, free_mask, config.linear_rtol)
    else:
        if init.grid != grid:
            raise ArgumentError('Initial iterate lives on a different grid')
        values = np.array(init.values)
    values[~free_mask] = data[~free_mask]
    nodes = np.flatnonzero(free_mask)
    selector = free_mask[interior_slices(grid.dim)]

    def residual(v: np.ndarray) -> np.ndarray:
        return np.linalg.det(hessian_array(v, h)[selector]) - rhs

    # second differences cannot resolve residuals below their own rounding error
    noise = 64 * np.finfo(float).eps * grid.dim * float(np.max(np.abs(values))) / (h * h)
    tolerance = max(config.tolerance, noise)
    if tolerance > config.tolerance:
        logging.debug(f'Newton tolerance raised to the rounding floor {tolerance:.3e}')
    log = _IterationLog(config.log_path)
    r = residual(values)
    r_norm = float(np.max(np.abs(r)))
    history = [r_norm]
    log.write(0, r_norm, 0.0)
    for iteration in range(1, config.max_iterations + 1):
        if r_norm <= tolerance:
            break
        hess = hessian_array(values, h)[selector]
        cof = convexified_cofactor(hess, config.convex_floor)
        jacobian = assemble_operator(grid.shape, h, nodes, cof)[nodes][:, nodes]
        delta, _ = solve_sparse(jacobian, -r, config.linear_rtol)
        step = 1.0
        while True:
            trial = values.copy()
            trial.reshape(-1)[nodes] += step * delta
            r_trial = residual(trial)
            trial_norm = float(np.max(np.abs(r_trial)))
            if trial_norm < r_norm:
                break
            step *= config.backtrack
            if step < config.min_step:
                raise NonConvergenceError(
                    f'Newton stagnated at iteration {iteration} with residual {r_norm:.3e}',
                    ScalarField(grid, values), history)
        values, r, r_norm = trial, r_trial, trial_norm
        history.append(r_norm)
        log.write(iteration, r_norm, step)
    if r_norm > tolerance:
        raise NonConvergenceError(
            f'Newton did not converge in {config.max_iterations} iterations, residual {r_norm:.3e}',
            ScalarField(grid, values), history)
    logging.debug(f'Newton converged in {len(history) - 1} iterations, residual {r_norm:.3e}')
    return ScalarField(grid, values, meta={'iterations': len(history) - 1, 'residual': r_norm,
                                           'history': history, 'tolerance': tolerance})


def comparison_check(u: ScalarField, v: ScalarField, tolerance: float = 0.0) -> CheckReport:
    """Checks u <= v + tolerance at every node and locates the worst violation."""
    difference = (u - v).values
    worst = np.unravel_index(int(np.argmax(difference)), difference.shape)
    violation = float(difference[worst])
    return CheckReport('comparison', violation <= tolerance, worst_violation=violation,
                       worst_node=[int(i) for i in worst],
                       worst_point=u.grid.coordinates(worst).tolist())


def bottom_gradient_check(u: ScalarField, Lam: float, slack: Optional[float] = None) -> CheckReport:
    """Bottom normal differences must lie in [−(Λ−1) − slack, 1 + slack]; slack defaults to h."""
    h = u.grid.h
    slack = h if slack is None else slack
    slope = (u.values[..., 1] - u.values[..., 0]) / h
    low, high = float(np.min(slope)), float(np.max(slope))
    passed = low >= -(Lam - 1) - slack and high <= 1 + slack
    return CheckReport('bottom-gradient', passed, min=low, max=high, slack=slack)


def sandwich_bounds(points: np.ndarray, q: QuadraticData, Lam: float):
    """
    Lower and upper envelopes q − (Λ−1)x_n/κ and q + x_n/κ, κ = det of the
    tangential block of A. For q = ½|x|² these are ½|x|² − (Λ−1)x_n and ½|x|² + x_n.
    """
    kappa = float(np.linalg.det(q.A[:-1, :-1])) if q.dim > 1 else 1.0
    base = q.evaluate(points)
    xn = points[..., -1]
    return base - (Lam - 1) * xn / kappa, base + xn / kappa


def sandwich_check(u: ScalarField, q: QuadraticData, Lam: float,
                   slack: Optional[float] = None) -> CheckReport:
    h = u.grid.h
    slack = 10 * h * h if slack is None else slack
    lower, upper = sandwich_bounds(u.grid.points(), q, Lam)
    values = u.values.reshape(-1)
    below = float(np.max(lower - values))
    above = float(np.max(values - upper))
    return CheckReport('sandwich', below <= slack and above <= slack,
                       lower_excess=below, upper_excess=above, slack=slack)
