'''
Central finite differences on the half-space grid and the sparse
machinery shared by the Monge-Ampère and the linear solvers.
'''
import logging
from typing import Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from halfma.base import LinearSolverError


def interior_slices(dim: int) -> Tuple[slice, ...]:
    return tuple(slice(1, -1) for _ in range(dim))


def _shifted(values: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    return values[tuple(slice(1 + o, n - 1 + o) for o, n in zip(offset, values.shape))]


def hessian_array(values: np.ndarray, h: float) -> np.ndarray:
    """
    Central-difference Hessians at every grid-interior node

    :param values: node values, shape of the grid
    :param h: grid spacing
    :returns: array of shape (interior shape) + (dim, dim)
    """
    dim = values.ndim
    interior_shape = tuple(n - 2 for n in values.shape)
    hess = np.empty(interior_shape + (dim, dim))
    centre = _shifted(values, (0,) * dim)
    h2 = h * h
    for i in range(dim):
        e_i = np.eye(dim, dtype=int)[i]
        hess[..., i, i] = (_shifted(values, e_i) - 2 * centre + _shifted(values, -e_i)) / h2
        for j in range(i + 1, dim):
            e_j = np.eye(dim, dtype=int)[j]
            cross = (_shifted(values, e_i + e_j) - _shifted(values, e_i - e_j)
                     - _shifted(values, e_j - e_i) + _shifted(values, -e_i - e_j)) / (4 * h2)
            hess[..., i, j] = hess[..., j, i] = cross
    return hess


def strides(shape: Sequence[int]) -> np.ndarray:
    return np.array([int(np.prod(shape[a + 1:])) for a in range(len(shape))], dtype=np.int64)


def assemble_operator(shape: Sequence[int], h: float, nodes: np.ndarray,
                      coeffs: np.ndarray) -> scipy.sparse.csr_matrix:
    """
    Rows of Σ a_ij D_ij u at the given flat node indices; all other rows are empty.
    Every listed node must be grid-interior so that its stencil stays on the grid.

    :param shape: grid shape
    :param h: grid spacing
    :param nodes: flat indices of the rows to fill
    :param coeffs: coefficient matrices, shape (len(nodes), dim, dim)
    """
    dim = len(shape)
    step = strides(shape)
    size = int(np.prod(shape))
    h2 = h * h
    rows, cols, vals = [], [], []

    def add(offset: int, weight: np.ndarray) -> None:
        rows.append(nodes)
        cols.append(nodes + offset)
        vals.append(weight)

    for i in range(dim):
        a = coeffs[:, i, i] / h2
        add(step[i], a)
        add(-step[i], a)
        add(0, -2 * a)
        for j in range(i + 1, dim):
            # both a_ij and a_ji use the four-point cross stencil
            a = coeffs[:, i, j] / (2 * h2)
            add(step[i] + step[j], a)
            add(-step[i] - step[j], a)
            add(step[i] - step[j], -a)
            add(step[j] - step[i], -a)
    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    return matrix.tocsr()


def solve_sparse(matrix, rhs: np.ndarray, rtol: float, refinements: int = 3,
                 accept: float = 1e-8) -> Tuple[np.ndarray, float]:
    """
    Direct sparse solve with a few steps of iterative refinement

    :returns: solution and achieved relative residual
    """
    matrix = scipy.sparse.csc_matrix(matrix)
    try:
        lu = scipy.sparse.linalg.splu(matrix)
    except RuntimeError as ex:
        raise LinearSolverError(f'Sparse factorization failed: {ex}') from ex
    solution = lu.solve(rhs)
    scale = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(rhs - matrix @ solution)) / scale
    for _ in range(refinements):
        if not np.isfinite(residual) or residual <= rtol:
            break
        solution = solution + lu.solve(rhs - matrix @ solution)
        residual = float(np.linalg.norm(rhs - matrix @ solution)) / scale
    if not np.all(np.isfinite(solution)) or not residual <= accept:
        raise LinearSolverError(f'Linear solve reached relative residual {residual:.3e}', residual)
    if residual > rtol:
        logging.debug(f'Linear solve stopped at relative residual {residual:.3e}')
    return solution, residual
