"""Smooth distance ``D_beta``, its gradient and the kernel fields ``H_a``.

For a boundary set with atoms ``y_i`` and weights ``w_i``::

    D_beta(X) = (sum_i w_i |X - y_i|^(-d-beta))^(-1/beta)
    H_a(X)    = sum_i w_i |X - y_i|^(-d-1-a) (X - y_i)
    grad D_beta = ((d + beta) / beta) D_beta^(beta+1) H_(beta+1)

The gradient formula is the exact derivative of the discrete sum.  Flat
lines with analytic tails add the closed-form contribution of the line
beyond the sampled window.  Queries within ``kappa * h`` of a parametric
curve are handled by subdividing the nearby panels; for other sets such
queries raise :class:`NearFieldError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import betainc

from ._kernels import kernel_sums
from .errors import DomainError, NearFieldError

#: Queries closer than ``NEAR_FACTOR * h`` need panel refinement.
NEAR_FACTOR = 10.0
#: Panels are refined until ``length <= PANEL_RATIO * distance``.
PANEL_RATIO = 0.5
_MAX_SUBDIV = 2 ** 14


@dataclass(frozen=True)
class OperatorParams:
    """Exponents of ``L = -div(D_beta^(d+1+gamma-n) grad)`` and of ``D_alpha``."""

    beta: float
    gamma: float = 0.0
    alpha: float | None = None
    d: int = 1
    n: int = 3

    def __post_init__(self):
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.beta)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not -1 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (-1, 1), got {self.gamma}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.d < self.n - 1:
            raise ValueError(f"need d < n - 1, got d={self.d}, n={self.n}")

    @classmethod
    def for_set(cls, bset, beta, gamma=0.0, alpha=None):
        return cls(beta, gamma, alpha, bset.dim_d, bset.dim_n)

    @property
    def weight_exponent(self):
        """Power of ``D_beta`` in the coefficient of the operator."""
        return self.d + 1 + self.gamma - self.n


@dataclass(frozen=True)
class FieldSample:
    """Values at one or many query points with a relative error estimate."""

    location: np.ndarray
    value: np.ndarray | float
    est_error: np.ndarray | float


def _beta_of(beta):
    return beta.beta if isinstance(beta, OperatorParams) else float(beta)


def _cos_power_tail(k, theta0):
    """``int_{theta0}^{pi/2} cos^k`` for ``k > -1`` and ``|theta0| < pi/2``."""
    a = 0.5 * (k + 1)
    half = 0.5 * beta_fn(a, 0.5)
    inc = betainc(a, 0.5, np.cos(theta0) ** 2)
    return np.where(theta0 >= 0, half * inc, half * (2.0 - inc))


def _tail_sums(X, start, p, vector):
    """Unit-density line along axis 0 restricted to ``|s| >= start``."""
    x0 = X[:, 0]
    perp = X[:, 1:]
    rho = np.linalg.norm(perp, axis=1)
    S0 = np.zeros(len(X))
    V = np.zeros_like(X) if vector else None
    for sign in (1.0, -1.0):
        u0 = start - sign * x0
        theta0 = np.arctan2(u0, rho)
        S0 += rho ** (1 - p) * _cos_power_tail(p - 2, theta0)
        if vector:
            V[:, 0] += -sign * (u0 ** 2 + rho ** 2) ** (-p / 2) / p
            V[:, 1:] += (perp * (rho ** (-1 - p)
                                 * _cos_power_tail(p, theta0))[:, None])
    return S0, V


def _direct(X, Y, w, p, vector):
    diff = X[None, :] - Y
    r2 = np.einsum("ij,ij->i", diff, diff)
    t = w * r2 ** (-p / 2)
    s0 = t.sum()
    v = (t / r2) @ diff if vector else None
    return s0, v


def _panel_sums(bset, X, idx, m, p, vector):
    h = bset.resolution_h
    t = bset.points[idx, 0]
    sub = (t[:, None] - h / 2 + (np.arange(m) + 0.5) * h / m).ravel()
    pts, speed = bset.curve(sub)
    return _direct(X, pts, speed * h / m, p, vector)


def _near_correction(bset, X, rho, p, vector, kappa, eta):
    h = bset.resolution_h
    idx = np.asarray(bset.tree.query_ball_point(X, 4 * kappa * h))
    if idx.size == 0:
        return 0.0, None, 0.0
    old0, oldv = _direct(X, bset.points[idx], bset.weights[idx], p, vector)
    smax = float(bset.weights[idx].max()) / h
    m = 2
    while m * eta * rho < h * smax and m < _MAX_SUBDIV:
        m *= 2
    new0, newv = _panel_sums(bset, X, idx, m, p, vector)
    half0, _ = _panel_sums(bset, X, idx, m // 2, p, False)
    dv = newv - oldv if vector else None
    return new0 - old0, dv, abs(new0 - half0)


def boundary_sums(bset, p, X, vector=True, kappa=NEAR_FACTOR,
                  eta=PANEL_RATIO):
    """Weighted kernel sums over the modelled boundary.

    Returns
    -------
    S0 : ndarray, shape (M,)
        ``sum w |X - y|^-p``.
    V : ndarray, shape (M, n) or None
        ``sum w |X - y|^-(p+2) (X - y)``.
    est_error : ndarray, shape (M,)
        Relative error estimate of ``S0``.
    dist : ndarray, shape (M,)
        Distance to the boundary.
    """
    if bset.count == 0:
        raise DomainError("boundary set is empty")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != bset.dim_n:
        raise DomainError(f"query points must have {bset.dim_n} coordinates")
    dist = bset.distance(X)
    h = bset.resolution_h
    if np.any(dist <= 1e-12 * max(1.0, bset.diameter)):
        raise NearFieldError("query point lies on the boundary")
    near = dist < kappa * h
    if np.any(near) and bset.curve is None:
        k = int(np.flatnonzero(near)[0])
        raise NearFieldError(
            f"query at distance {dist[k]:.3g} < {kappa} h = {kappa * h:.3g} "
            "and the set has no parametrisation for refinement")
    S0, V = kernel_sums(X, bset.points, bset.weights, p, vector)
    if bset.tail_start is not None:
        t0, tv = _tail_sums(X, bset.tail_start, p, vector)
        S0 += t0
        if vector:
            V += tv
    err = (h / dist) ** (p + 1)
    for i in np.flatnonzero(near):
        d0, dv, inc = _near_correction(bset, X[i], dist[i], p, vector,
                                       kappa, eta)
        S0[i] += d0
        if vector and dv is not None:
            V[i] += dv
        err[i] = inc / S0[i]
    return S0, V, err, dist


def _pack(X, value, err):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        v = value[0]
        return FieldSample(X, float(v) if np.ndim(v) == 0 else v,
                           float(err[0]))
    return FieldSample(X, value, err)


def d_beta_arrays(bset, beta, X, gradient=False, **kw):
    """``(D, grad D or None, est_error)`` as arrays over query points."""
    beta = _beta_of(beta)
    p = bset.dim_d + beta
    S0, V, err, _ = boundary_sums(bset, p, X, vector=gradient, **kw)
    D = S0 ** (-1.0 / beta)
    G = (p / beta) * (D ** (beta + 1))[:, None] * V if gradient else None
    return D, G, err


def d_beta(bset, beta, X, **kw):
    """Smooth distance ``D_beta`` at one point or an array of points.

    ``beta`` may be a float or an :class:`OperatorParams` (its ``beta`` is
    used; pass ``params.alpha`` explicitly for ``D_alpha``).
    """
    D, _, err = d_beta_arrays(bset, beta, X, **kw)
    return _pack(X, D, err)


def grad_d_beta(bset, beta, X, **kw):
    """Exact gradient of the discrete ``D_beta``."""
    _, G, err = d_beta_arrays(bset, beta, X, gradient=True, **kw)
    return _pack(X, G, err)


def h_alpha(bset, a, X, **kw):
    """Kernel field ``H_a(X) = sum w |X - y|^(-d-1-a) (X - y)``."""
    p = bset.dim_d + a - 1
    _, V, err, _ = boundary_sums(bset, p, X, vector=True, **kw)
    return _pack(X, V, err)


def divergence_h(bset, X, step, a=None, **kw):
    """Central-difference divergence of ``H_a``, default ``a = n - d - 1``.

    The Newtonian choice ``a = n - d - 1`` gives a divergence-free field.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if a is None:
        a = bset.dim_n - bset.dim_d - 1
    dist = bset.distance(X)
    if np.any(step > dist / 10):
        raise DomainError(
            f"step {step:.3g} exceeds dist / 10 = {dist.min() / 10:.3g}")
    n = bset.dim_n
    shifts = np.concatenate([np.eye(n), -np.eye(n)]) * step
    Q = (X[:, None, :] + shifts[None]).reshape(-1, n)
    H = h_alpha(bset, a, Q, **kw).value.reshape(len(X), 2 * n, n)
    div = sum((H[:, k, k] - H[:, n + k, k]) / (2 * step) for k in range(n))
    return float(div[0]) if len(X) == 1 else div


def flat_constant(d, beta):
    """``D_beta / dist`` for the flat d-plane, by one-dimensional quadrature.

    ``int_{R^d} (1 + |s|^2)^(-(d+beta)/2) ds`` is reduced to a radial
    integral and evaluated with scipy.
    """
    from scipy.integrate import quad

    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)  # |S^{d-1}|
    val, _ = quad(lambda s: area * s ** (d - 1) * (1 + s * s)
                  ** (-(d + beta) / 2), 0, np.inf, epsabs=0, epsrel=1e-13,
                  limit=200)
    return val ** (-1.0 / beta)
