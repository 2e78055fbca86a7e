import csv
import enum
import io
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from halfma.base import (ArgumentError, ConfigurationError, Evaluator, OutOfRangeError,
                         UnsupportedDimensionError, ValidationError)
from halfma.checkpoint import digest_text
from halfma.const import SUPPORTED_DIMS

NodeIndex = Tuple[int, ...]


class NodeClass(enum.IntEnum):
    INTERIOR = 0
    BOTTOM = 1
    OUTER = 2


class HalfGrid(object):
    """
    Uniform grid on [-L, L]^(n-1) x [0, L_n]. Arrays over the grid have shape
    ``grid.shape``; the last axis is the normal direction x_n.
    """

    def __init__(self, dim: int, L: float, L_n: float, h: float) -> None:
        self.dim = dim
        self.L = float(L)
        self.L_n = float(L_n)
        self.h = float(h)
        self.n_side = int(round(2 * self.L / self.h)) + 1
        self.n_vert = int(round(self.L_n / self.h)) + 1
        self.shape: Tuple[int, ...] = (self.n_side,) * (dim - 1) + (self.n_vert,)
        self.axes: List[np.ndarray] = [-self.L + self.h * np.arange(self.n_side)
                                       for _ in range(dim - 1)]
        self.axes.append(self.h * np.arange(self.n_vert))
        self._points: Optional[np.ndarray] = None
        self._classes: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self, index: Sequence[int]) -> np.ndarray:
        return np.array([self.axes[a][i] for a, i in enumerate(index)])

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing='ij'))

    def points(self) -> np.ndarray:
        """All node coordinates, shape (size, dim), in C order of the node arrays."""
        if self._points is None:
            self._points = np.stack([m.ravel() for m in self.mesh()], axis=-1)
            self._points.setflags(write=False)
        return self._points

    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points(), axis=-1).reshape(self.shape)

    def node_classes(self) -> np.ndarray:
        if self._classes is None:
            classes = np.full(self.shape, int(NodeClass.OUTER), dtype=np.int8)
            classes[tuple(slice(1, -1) for _ in range(self.dim))] = int(NodeClass.INTERIOR)
            classes[..., 0] = int(NodeClass.BOTTOM)
            classes.setflags(write=False)
            self._classes = classes
        return self._classes

    def interior_mask(self) -> np.ndarray:
        return self.node_classes() == NodeClass.INTERIOR

    def bottom_mask(self) -> np.ndarray:
        return self.node_classes() == NodeClass.BOTTOM

    def outer_mask(self) -> np.ndarray:
        return self.node_classes() == NodeClass.OUTER

    def flat_index(self, index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(index), self.shape))

    def nearest_node(self, point: Sequence[float]) -> NodeIndex:
        offsets = [self.L] * (self.dim - 1) + [0.0]
        index = []
        for a, (x, low) in enumerate(zip(point, offsets)):
            i = int(round((x + low) / self.h))
            index.append(min(max(i, 0), self.shape[a] - 1))
        return tuple(index)

    def to_header(self) -> Dict[str, Any]:
        return {'dim': self.dim, 'L': self.L, 'L_n': self.L_n, 'h': self.h}

    @classmethod
    def from_header(cls, header: Dict[str, Any]) -> 'HalfGrid':
        return build_half_grid(header['dim'], header['L'], header['L_n'], header['h'])

    def __eq__(self, other) -> bool:
        return (isinstance(other, HalfGrid) and self.dim == other.dim and self.L == other.L
                and self.L_n == other.L_n and self.h == other.h)

    def __repr__(self) -> str:
        return f'<HalfGrid dim={self.dim} L={self.L} L_n={self.L_n} h={self.h} shape={self.shape}>'


def _integer_ratio(length: float, h: float, name: str) -> int:
    ratio = length / h
    rounded = round(ratio)
    if abs(ratio - rounded) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f'{name}/h = {ratio} is not an integer', field=name)
    if rounded < 2:
        raise ConfigurationError(f'{name}/h = {rounded} leaves no interior nodes', field=name)
    return int(rounded)


def build_half_grid(dim: int, L: float, L_n: float, h: float) -> HalfGrid:
    """
    Build the uniform half-space grid

    :param dim: space dimension (2 or 3)
    :param L: tangential half extent
    :param L_n: normal extent
    :param h: spacing; L/h and L_n/h must be integers
    :returns: the grid
    """
    if dim not in SUPPORTED_DIMS:
        raise UnsupportedDimensionError(f'Dimension {dim} is not supported, use one of {SUPPORTED_DIMS}')
    if not h > 0 or not math.isfinite(h):
        raise ConfigurationError(f'Spacing must be positive, got {h}', field='h')
    if not L > 0 or not L_n > 0:
        raise ConfigurationError(f'Extents must be positive, got L={L}, L_n={L_n}', field='L')
    _integer_ratio(L, h, 'L')
    _integer_ratio(L_n, h, 'L_n')
    return HalfGrid(dim, L, L_n, h)


def classify_node(grid: HalfGrid, index: Sequence[int]) -> NodeClass:
    if len(index) != grid.dim or any(not 0 <= i < n for i, n in zip(index, grid.shape)):
        raise OutOfRangeError(f'Node {tuple(index)} is outside the grid of shape {grid.shape}')
    return NodeClass(int(grid.node_classes()[tuple(index)]))


def annulus_nodes(grid: HalfGrid, r_in: float, r_out: float) -> List[NodeIndex]:
    """
    Nodes with r_in <= |x| < r_out, in C order. r_out may be infinite.
    Adjacent annuli partition the grid.
    """
    mask = annulus_mask(grid, r_in, r_out)
    return [tuple(int(i) for i in index) for index in np.argwhere(mask)]


def annulus_mask(grid: HalfGrid, r_in: float, r_out: float) -> np.ndarray:
    if r_in < 0 or not r_in < r_out:
        raise ArgumentError(f'Empty annulus: r_in={r_in}, r_out={r_out}')
    radius = grid.radius()
    return (radius >= r_in) & (radius < r_out)


class ScalarField(object):
    """
    Real values attached to every node of a grid. Values are read-only;
    arithmetic returns new fields. ``meta`` carries solver bookkeeping.
    """

    def __init__(self, grid: HalfGrid, values, meta: Optional[Dict[str, Any]] = None) -> None:
        self.grid = grid
        self.values = np.array(values, dtype=float).reshape(grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError('Field values must be finite')
        self.values.setflags(write=False)
        self.meta: Dict[str, Any] = meta or {}

    @classmethod
    def from_function(cls, grid: HalfGrid, func: Evaluator) -> 'ScalarField':
        return cls(grid, np.asarray(func(grid.points()), dtype=float).reshape(grid.shape))

    def at(self, index: Sequence[int]) -> float:
        return float(self.values[tuple(index)])

    def interpolate(self, points, method: str = 'linear') -> np.ndarray:
        interpolator = RegularGridInterpolator(self.grid.axes, self.values, method=method)
        return interpolator(np.atleast_2d(np.asarray(points, dtype=float)))

    def sup_norm(self, mask: Optional[np.ndarray] = None) -> float:
        values = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(values))) if values.size else 0.0

    def _other_values(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ArgumentError(f'Fields live on different grids: {self.grid} vs {other.grid}')
            return other.values
        return other

    def __add__(self, other) -> 'ScalarField':
        return ScalarField(self.grid, self.values + self._other_values(other))

    def __sub__(self, other) -> 'ScalarField':
        return ScalarField(self.grid, self.values - self._other_values(other))

    def __mul__(self, scalar: float) -> 'ScalarField':
        return ScalarField(self.grid, self.values * scalar)

    def __neg__(self) -> 'ScalarField':
        return ScalarField(self.grid, -self.values)

    def to_csv(self) -> str:
        """Node snapshot as CSV: lattice indices, coordinates and value, one node per row."""
        dim = self.grid.dim
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(list('ijk'[:dim]) + [f'x{a + 1}' for a in range(dim)] + ['value'])
        points = self.grid.points()
        for flat, index in enumerate(np.ndindex(*self.grid.shape)):
            writer.writerow(list(index) + [repr(float(x)) for x in points[flat]]
                            + [repr(float(self.values[index]))])
        return buffer.getvalue()

    def header(self) -> Dict[str, Any]:
        return {'grid': self.grid.to_header(), 'sha256': digest_text(self.to_csv())}

    def __repr__(self) -> str:
        return f'<ScalarField on {self.grid} sup={self.sup_norm():.4g}>'


def field_from_csv(grid: HalfGrid, text: str) -> ScalarField:
    values = np.empty(grid.shape)
    reader = csv.reader(io.StringIO(text))
    next(reader)
    for row in reader:
        index = tuple(int(i) for i in row[:grid.dim])
        values[index] = float(row[-1])
    return ScalarField(grid, values)
