import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from halfma.const import (BACKTRACK_FACTOR, CONVEX_FLOOR, LINEAR_RTOL, MIN_STEP,
                          NEWTON_MAX_ITER, NEWTON_TOL)

# point array of shape (..., dim) -> values of shape (...)
Evaluator = Callable[[np.ndarray], np.ndarray]


class ConfigurationError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        if field:
            message = f'{field}: {message}'
        super().__init__(message)


class UnsupportedDimensionError(ValueError):
    pass


class ArgumentError(ValueError):
    pass


class OutOfRangeError(IndexError):
    pass


class DomainError(ValueError):
    pass


class SingularityError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class StencilError(ValueError):
    pass


class EllipticityError(ValueError):
    pass


class CoefficientError(ValueError):
    def __init__(self, message: str, node: Optional[Tuple[float, ...]] = None) -> None:
        self.node = node
        super().__init__(message)


class DegenerateAnnulusError(ValueError):
    pass


class LevelError(ValueError):
    pass


class DegenerateSectionError(ValueError):
    pass


class FactorizationError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, iterate=None, history: Optional[List[float]] = None) -> None:
        self.iterate = iterate
        self.history = history or []
        super().__init__(message)


class LinearSolverError(RuntimeError):
    def __init__(self, message: str, residual: float = float('nan')) -> None:
        self.residual = residual
        super().__init__(message)


class QuadraticData(object):
    """
    Quadratic polynomial ½xᵀAx + b·x + c

    :param A: symmetric matrix
    :param b: linear coefficients (zeros by default)
    :param c: constant term
    :param normalized: also require A to be positive definite with unit determinant
    """

    def __init__(self, A, b=None, c: float = 0.0, normalized: bool = False) -> None:
        self.A = np.array(A, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValidationError(f'Quadratic matrix must be square, got shape {self.A.shape}')
        self.b = np.zeros(self.dim) if b is None else np.array(b, dtype=float)
        if self.b.shape != (self.dim,):
            raise ValidationError(f'Linear term must have {self.dim} entries, got {self.b.shape}')
        self.c = float(c)
        if not np.allclose(self.A, self.A.T, rtol=0, atol=1e-12):
            raise ValidationError('Quadratic matrix is not symmetric')
        if normalized:
            if not self.is_positive_definite():
                raise ValidationError('Quadratic matrix is not positive definite')
            if abs(np.linalg.det(self.A) - 1.0) > 1e-12:
                raise ValidationError(
                    f'Quadratic matrix has determinant {np.linalg.det(self.A):.15g}, expected 1')
        self.A.setflags(write=False)
        self.b.setflags(write=False)

    @classmethod
    def identity(cls, dim: int) -> 'QuadraticData':
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def is_positive_definite(self) -> bool:
        return bool(np.linalg.eigvalsh(self.A)[0] > 0)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum('...i,ij,...j->...', x, self.A, x) + x @ self.b + self.c

    def gradient(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.A + self.b

    def bottom_restriction(self) -> 'QuadraticData':
        """The polynomial seen on {x_n = 0}, as a quadratic in x′."""
        return QuadraticData(self.A[:-1, :-1], self.b[:-1], self.c)

    def compatible_with(self, bottom: 'QuadraticData', atol: float = 1e-12) -> bool:
        restricted = self.bottom_restriction()
        return (restricted.dim == bottom.dim and np.allclose(restricted.A, bottom.A, atol=atol, rtol=0)
                and np.allclose(restricted.b, bottom.b, atol=atol, rtol=0)
                and abs(restricted.c - bottom.c) <= atol)

    def with_normal_slope(self, b_n: float) -> 'QuadraticData':
        b = self.b.copy()
        b[-1] += b_n
        return QuadraticData(self.A, b, self.c)

    def coefficient_gap(self, other: 'QuadraticData') -> float:
        return float(max(np.max(np.abs(self.A - other.A)), np.max(np.abs(self.b - other.b)),
                         abs(self.c - other.c)))

    def to_dict(self) -> Dict[str, Any]:
        return {'A': self.A.tolist(), 'b': self.b.tolist(), 'c': self.c}

    def __repr__(self) -> str:
        return f'<QuadraticData A={self.A.tolist()} b={self.b.tolist()} c={self.c}>'


class SourceProfile(object):
    """
    One-variable source profile f(x_n) used to build the comparison functions u₊ and u₋.
    Either piecewise constant (``pieces``) or an arbitrary callable (``func``);
    both equal 1 for x_n > 1.
    """

    def __init__(self, pieces: Optional[Sequence[Tuple[float, float, float]]] = None,
                 func: Optional[Callable[[float], float]] = None,
                 kind: str = 'plus', Lam: float = 1.0) -> None:
        if (pieces is None) == (func is None):
            raise ValidationError('Exactly one of pieces or func must be given')
        if kind not in ('plus', 'minus'):
            raise ValidationError(f'Unknown profile kind {kind}')
        self.kind = kind
        self.Lam = float(Lam)
        self.func = func
        self.pieces: Optional[List[Tuple[float, float, float]]] = None
        if pieces is not None:
            self.pieces = [(float(a), float(b), float(v)) for a, b, v in pieces]
        self.validate()

    def value(self, s: float) -> float:
        if s > 1.0:
            return 1.0
        if self.func is not None:
            return float(self.func(s))
        for start, end, value in self.pieces:
            if start <= s <= end:
                return value
        return 1.0

    def validate(self) -> None:
        if self.pieces is not None:
            for start, end, value in self.pieces:
                if not 0.0 <= start < end <= 1.0:
                    raise ValidationError(f'Profile piece [{start}, {end}] is not inside [0, 1]')
            samples = [v for _, _, v in self.pieces] + [1.0]
        else:
            grid = np.linspace(0.0, 1.0, 1001)
            samples = [self.value(s) for s in grid]
            tail = [float(self.func(s)) for s in np.linspace(1.0 + 1e-3, 10.0, 50)]
            if not np.allclose(tail, 1.0):
                raise ValidationError('Profile must equal 1 beyond x_n = 1')
        low, high = min(samples), max(samples)
        if self.kind == 'plus' and (low < 0.0 or high > 1.0):
            raise ValidationError(f'Lower profile must take values in [0, 1], got [{low}, {high}]')
        if self.kind == 'minus' and (low < 1.0 or high > self.Lam):
            raise ValidationError(
                f'Upper profile must take values in [1, {self.Lam}], got [{low}, {high}]')

    def __repr__(self) -> str:
        body = self.pieces if self.pieces is not None else self.func
        return f'<SourceProfile {self.kind}: {body}>'


class BarrierSpec(object):
    def __init__(self, s: float, delta: Optional[float] = None, R1: float = 1.0, dim: int = 2) -> None:
        self.s = float(s)
        self.dim = dim
        # half of the admissible upper limit unless given
        self.delta = float(delta) if delta is not None else 0.5 * min(1.0, self.s / (dim - 1))
        self.R1 = float(R1)
        if not 0.0 < self.delta < 1.0:
            raise ValidationError(f'Barrier exponent delta={self.delta} must lie in (0, 1)')
        if not self.delta < self.s / (dim - 1):
            raise ValidationError(
                f'Barrier exponent delta={self.delta} must be below s/(n-1)={self.s / (dim - 1)}')
        if self.R1 <= 0:
            raise ValidationError('Barrier radius R1 must be positive')

    def __repr__(self) -> str:
        return f'<BarrierSpec delta={self.delta} s={self.s} R1={self.R1} dim={self.dim}>'


class SourceTerm(object):
    """
    Right-hand side f of det D²u = f

    :param func: vectorized evaluator on point arrays of shape (N, dim)
    :param R0: f equals 1 outside the half ball of this radius
    :param lam: positive lower bound of f (0 for the degenerate case)
    :param Lam: upper bound of f
    :param sampling: ``node`` samples f at grid nodes, ``average`` averages sub-cell samples
    """

    def __init__(self, func: Evaluator, R0: float, lam: float, Lam: float,
                 sampling: str = 'node', subsamples: int = 4) -> None:
        self.func = func
        self.R0 = float(R0)
        self.lam = float(lam)
        self.Lam = float(Lam)
        if sampling not in ('node', 'average'):
            raise ValidationError(f'Unknown sampling rule {sampling}')
        self.sampling = sampling
        self.subsamples = subsamples
        if self.lam < 0 or self.Lam < max(self.lam, 1.0):
            raise ValidationError(f'Invalid bounds lam={lam}, Lam={Lam}')

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.asarray(points, dtype=float)), dtype=float)

    def sample(self, points: np.ndarray, h: float) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.sampling == 'node':
            return self.evaluate(points)
        dim = points.shape[-1]
        k = self.subsamples
        # midpoints of a k^dim subdivision of the cell centred on each node
        ticks = ((np.arange(k) + 0.5) / k - 0.5) * h
        offsets = np.stack(np.meshgrid(*([ticks] * dim), indexing='ij'), axis=-1).reshape(-1, dim)
        total = np.zeros(points.shape[:-1])
        for offset in offsets:
            total += self.evaluate(points + offset)
        return total / len(offsets)

    def __repr__(self) -> str:
        return f'<SourceTerm R0={self.R0} lam={self.lam} Lam={self.Lam} sampling={self.sampling}>'


class SolverConfig(object):
    def __init__(self, tolerance: float = NEWTON_TOL, max_iterations: int = NEWTON_MAX_ITER,
                 backtrack: float = BACKTRACK_FACTOR, min_step: float = MIN_STEP,
                 convex_floor: float = CONVEX_FLOOR, linear_rtol: float = LINEAR_RTOL,
                 log_path: Optional[str] = None) -> None:
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.backtrack = backtrack
        self.min_step = min_step
        self.convex_floor = convex_floor
        self.linear_rtol = linear_rtol
        # CSV iteration log, appended to when set
        self.log_path = log_path
        if not 0 < backtrack < 1:
            raise ValidationError('Backtracking factor must lie in (0, 1)')
        if tolerance <= 0 or max_iterations < 1:
            raise ValidationError('Newton tolerance and iteration cap must be positive')

    def __repr__(self) -> str:
        return f'<SolverConfig tol={self.tolerance} max_iter={self.max_iterations}>'


class DecayFit(object):
    """
    Result of a log-log regression |V| ≈ C r^p over [r_min, r_max]. ``status``
    is ``fit``, ``underflow`` (some samples below the floor) or ``exact-zero``
    (all of them). ``mode`` names the sampling: ``ray``, ``annulus``, ``bottom``
    or ``scaling`` for fits over levels instead of radii.
    """

    def __init__(self, exponent: float, constant: float, residual: float, status: str = 'fit',
                 radii: Optional[np.ndarray] = None, samples: Optional[np.ndarray] = None,
                 mode: str = 'ray', r_range: Optional[Tuple[float, float]] = None) -> None:
        self.exponent = exponent
        self.constant = constant
        self.residual = residual
        self.status = status
        self.radii = radii
        self.samples = samples
        self.mode = mode
        if r_range is None and radii is not None and len(radii):
            r_range = (float(np.min(radii)), float(np.max(radii)))
        self.r_min, self.r_max = r_range if r_range is not None else (math.nan, math.nan)

    def to_dict(self) -> Dict[str, Any]:
        return {'exponent': self.exponent, 'constant': self.constant,
                'residual': self.residual, 'status': self.status, 'mode': self.mode,
                'r_min': self.r_min, 'r_max': self.r_max}

    def __repr__(self) -> str:
        return (f'<DecayFit {self.mode} {self.status}: p={self.exponent:.4g} C={self.constant:.4g} '
                f'on [{self.r_min:.4g}, {self.r_max:.4g}]>')


class CheckReport(object):
    def __init__(self, name: str, passed: bool, **metrics) -> None:
        self.name = name
        self.passed = bool(passed)
        self.metrics = metrics

    def __getitem__(self, key: str):
        return self.metrics[key]

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'passed': self.passed, 'metrics': self.metrics}

    def __repr__(self) -> str:
        return f'<CheckReport {self.name}: {"pass" if self.passed else "fail"} {self.metrics}>'
