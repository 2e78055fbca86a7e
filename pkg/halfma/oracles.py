'''
Closed-form functions with known Monge-Ampère or linear behaviour,
used as ground truth by the solvers and the experiments.
'''
from typing import Tuple

import numpy as np
from scipy.integrate import quad

from halfma.base import (BarrierSpec, DomainError, QuadraticData, SingularityError,
                         SourceProfile, ValidationError)


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValidationError(f'Expected points with {dim} coordinates, got shape {x.shape}')
    return x


def remark_solution(x, dim: int = 2) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Non-quadratic global solution of det D²u = 1 in the half space with
    u = ½|x′|² on the bottom:
    u = x₁²/(2(x_n+1)) + ½(x₂² + ... + x_{n-1}²) + (x_n³ + 3x_n²)/6

    :param x: point or array of points, last axis of length dim
    :returns: value, gradient and Hessian (broadcast over the leading axes)
    """
    x = _as_points(x, dim)
    if np.any(x[..., -1] < 0):
        raise DomainError('The remark solution is defined for x_n >= 0 only')
    x1, xn = x[..., 0], x[..., -1]
    t = xn + 1.0
    middle = x[..., 1:-1]
    value = x1 ** 2 / (2 * t) + 0.5 * np.sum(middle ** 2, axis=-1) + (xn ** 3 + 3 * xn ** 2) / 6
    grad = np.zeros(x.shape)
    grad[..., 0] = x1 / t
    grad[..., 1:-1] = middle
    grad[..., -1] = -x1 ** 2 / (2 * t ** 2) + 0.5 * xn ** 2 + xn
    hess = np.zeros(x.shape + (dim,))
    hess[..., 0, 0] = 1 / t
    hess[..., 0, -1] = hess[..., -1, 0] = -x1 / t ** 2
    hess[..., -1, -1] = x1 ** 2 / t ** 3 + t
    for k in range(1, dim - 1):
        hess[..., k, k] = 1.0
    return value, grad, hess


def profile_integral(xn, profile: SourceProfile) -> np.ndarray:
    """∫₀^{x_n} ∫₀^t (f(s) − 1) ds dt plus ½x_n², i.e. ∫₀^{x_n} (x_n − s) f(s) ds."""
    xn = np.asarray(xn, dtype=float)
    if profile.pieces is not None:
        # f = 1 everywhere, corrected piece by piece
        total = 0.5 * xn ** 2
        for start, end, value in profile.pieces:
            upper = np.minimum(end, xn)
            active = xn > start
            part = 0.5 * (xn - start) ** 2 - 0.5 * (xn - upper) ** 2
            total = total + np.where(active, (value - 1.0) * part, 0.0)
        return total

    def single(t: float) -> float:
        head = min(t, 1.0)
        inner, _ = quad(lambda s: (t - s) * profile.value(s), 0.0, head,
                        epsabs=1e-12, epsrel=1e-12, limit=200)
        tail = 0.5 * (t - 1.0) ** 2 if t > 1.0 else 0.0
        return inner + tail
    return np.vectorize(single, otypes=[float])(xn)


def u_pm(x, profile: SourceProfile, dim: int = 2) -> np.ndarray:
    """½|x′|² + ∫₀^{x_n}∫₀^t f(s) ds dt, the one-dimensional comparison solution."""
    x = _as_points(x, dim)
    if np.any(x[..., -1] < 0):
        raise DomainError('u_pm is defined for x_n >= 0 only')
    return 0.5 * np.sum(x[..., :-1] ** 2, axis=-1) + profile_integral(x[..., -1], profile)


def quadratic_eval(q: QuadraticData, x) -> np.ndarray:
    return q.evaluate(_as_points(x, q.dim))


def poisson_rate(x, dim: int = 2) -> np.ndarray:
    """x_n/|x|^n, the decay profile of bounded solutions vanishing on the bottom."""
    x = _as_points(x, dim)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularityError('x_n/|x|^n is singular at the origin')
    return x[..., -1] / r ** dim


def barrier_value(x, spec: BarrierSpec) -> np.ndarray:
    x = _as_points(x, spec.dim)
    if np.any(x[..., -1] < 0):
        raise DomainError('The barrier is defined for x_n >= 0 only')
    P = poisson_rate(x, spec.dim)
    return P - P ** (1 + spec.delta)


def barrier_w(x, spec: BarrierSpec):
    """
    Barrier w = P − P^(1+δ) with P = x_n/|x|^n, together with its gradient,
    Hessian and Laplacian. Derivatives need x_n > 0.

    :returns: (value, gradient, Hessian, Laplacian)
    """
    n, delta = spec.dim, spec.delta
    x = _as_points(x, n)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularityError('The barrier is singular at the origin')
    xn = x[..., -1]
    if np.any(xn <= 0):
        raise DomainError('Barrier derivatives need x_n > 0')
    P = xn / r ** n
    value = P - P ** (1 + delta)
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    # gradient of P
    g = e_n / r[..., None] ** n - n * (xn / r ** (n + 2))[..., None] * x
    factor = 1 - (1 + delta) * P ** delta
    grad = factor[..., None] * g
    eye = np.eye(n)
    outer_x = x[..., :, None] * x[..., None, :]
    sym_n = x[..., :, None] * e_n[None, :] + e_n[:, None] * x[..., None, :]
    hess_P = (-n * (sym_n + xn[..., None, None] * eye) / r[..., None, None] ** (n + 2)
              + n * (n + 2) * (xn / r ** (n + 4))[..., None, None] * outer_x)
    curvature = delta * (1 + delta) * P ** (delta - 1)
    hess = (factor[..., None, None] * hess_P
            - curvature[..., None, None] * g[..., :, None] * g[..., None, :])
    laplacian = -curvature * (1 / r ** (2 * n) + (n * n - 2 * n) * xn ** 2 / r ** (2 * n + 2))
    return value, grad, hess, laplacian
