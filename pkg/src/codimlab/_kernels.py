"""Compiled inner loops for boundary sums."""

import math

import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB layer shipped with some wheels is too old and only warns
    numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True, inline="always")
def _inv_power(r2, p, mode, k):
    # r2^(-p/2); mode 0: p = 2k, mode 1: p = 2k + 1, mode 2: general
    inv = 1.0 / r2
    t = 1.0
    if mode == 2:
        return math.pow(r2, -0.5 * p)
    for _ in range(k):
        t *= inv
    if mode == 1:
        t /= math.sqrt(r2)
    return t


def _mode(p):
    k = int(round(p))
    if abs(p - k) < 1e-12 and k >= 0:
        return (0, k // 2) if k % 2 == 0 else (1, k // 2)
    return 2, 0


@njit(parallel=True, cache=True)
def _sums_vec(X, Y, w, p, mode, k, S0, V):
    M, n = X.shape
    N = Y.shape[0]
    for i in prange(M):
        s0 = 0.0
        for a in range(n):
            V[i, a] = 0.0
        for j in range(N):
            r2 = 0.0
            for a in range(n):
                diff = X[i, a] - Y[j, a]
                r2 += diff * diff
            t = w[j] * _inv_power(r2, p, mode, k)
            s0 += t
            t /= r2
            for a in range(n):
                V[i, a] += t * (X[i, a] - Y[j, a])
        S0[i] = s0


@njit(parallel=True, cache=True)
def _sums_scalar(X, Y, w, p, mode, k, S0):
    M, n = X.shape
    N = Y.shape[0]
    for i in prange(M):
        s0 = 0.0
        for j in range(N):
            r2 = 0.0
            for a in range(n):
                diff = X[i, a] - Y[j, a]
                r2 += diff * diff
            s0 += w[j] * _inv_power(r2, p, mode, k)
        S0[i] = s0


def kernel_sums(X, Y, w, p, vector=True):
    """Return ``S0 = sum w |X-y|^-p`` and ``V = sum w |X-y|^-(p+2) (X-y)``.

    ``V`` is None when ``vector`` is False.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    mode, k = _mode(p)
    S0 = np.empty(X.shape[0])
    if vector:
        V = np.empty_like(X)
        _sums_vec(X, Y, w, float(p), mode, k, S0, V)
        return S0, V
    _sums_scalar(X, Y, w, float(p), mode, k, S0)
    return S0, None
