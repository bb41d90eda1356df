"""Hot loops. numba-compiled unless CONICLPV_NO_NUMBA=1 (or numba is missing)."""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CONICLPV_NO_NUMBA", "0") not in ("1", "true", "yes")


def rk4_linear_py(h, A0, Am, A1, B0, Bm, B1, u0, um, u1, x0, blowup):
    """RK4 for x' = A(t)x + B(t)u(t).

    Step k uses coefficients at its start (A0[k]), midpoint (Am[k]) and end
    (A1[k]); keeping the end separate lets a step finish on the left limit
    of a parameter jump. Returns (X, escape) where escape is the first node
    index whose state infinity norm exceeds `blowup` (or is non-finite), and
    -1 otherwise.
    """
    N = h.shape[0]
    n = x0.shape[0]
    X = np.zeros((N + 1, n))
    X[0] = x0
    x = x0.copy()
    for k in range(N):
        hk = h[k]
        bu0 = B0[k] @ u0[k]
        bum = Bm[k] @ um[k]
        bu1 = B1[k] @ u1[k]
        k1 = A0[k] @ x + bu0
        k2 = Am[k] @ (x + 0.5 * hk * k1) + bum
        k3 = Am[k] @ (x + 0.5 * hk * k2) + bum
        k4 = A1[k] @ (x + hk * k3) + bu1
        x = x + (hk / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[k + 1] = x
        nrm = np.max(np.abs(x)) if n else 0.0
        if not np.isfinite(nrm) or nrm > blowup:
            return X, k + 1
    return X, -1


def _matvec(M, v):
    r, c = M.shape
    out = np.zeros(r)
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += M[i, j] * v[j]
        out[i] = s
    return out


def _rk4_linear_loops(h, A0, Am, A1, B0, Bm, B1, u0, um, u1, x0, blowup):
    N = h.shape[0]
    n = x0.shape[0]
    X = np.zeros((N + 1, n))
    x = x0.copy()
    for i in range(n):
        X[0, i] = x[i]
    tmp = np.zeros(n)
    for k in range(N):
        hk = h[k]
        bu0 = _matvec(B0[k], u0[k])
        bum = _matvec(Bm[k], um[k])
        bu1 = _matvec(B1[k], u1[k])
        k1 = _matvec(A0[k], x) + bu0
        for i in range(n):
            tmp[i] = x[i] + 0.5 * hk * k1[i]
        k2 = _matvec(Am[k], tmp) + bum
        for i in range(n):
            tmp[i] = x[i] + 0.5 * hk * k2[i]
        k3 = _matvec(Am[k], tmp) + bum
        for i in range(n):
            tmp[i] = x[i] + hk * k3[i]
        k4 = _matvec(A1[k], tmp) + bu1
        nrm = 0.0
        for i in range(n):
            x[i] = x[i] + (hk / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            X[k + 1, i] = x[i]
            a = abs(x[i])
            if not np.isfinite(a):
                nrm = np.inf
            elif a > nrm:
                nrm = a
        if nrm > blowup:
            return X, k + 1
    return X, -1


if HAVE_NUMBA:
    _matvec = _njit(cache=True)(_matvec)
    rk4_linear_nb = _njit(cache=True)(_rk4_linear_loops)
else:  # pragma: no cover
    rk4_linear_nb = _rk4_linear_loops


def rk4_linear(h, A0, Am, A1, B0, Bm, B1, u0, um, u1, x0, blowup, use_numba=None):
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (h, A0, Am, A1, B0, Bm, B1, u0, um, u1, x0)]
    use_numba = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    fn = rk4_linear_nb if use_numba else rk4_linear_py
    X, esc = fn(*args, float(blowup))
    return X, int(esc)
