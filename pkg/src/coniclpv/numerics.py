"""Dense linear algebra and ODE integration primitives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InputError, ShapeError

EIG_TOL = 1e-9
BLOWUP = 1e9


@dataclass(frozen=True)
class EigenReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None

    @property
    def min_symmetric_eigenvalue(self) -> float:
        return float(np.min(self.eigenvalues.real))

    @property
    def max_eigenvalue(self) -> float:
        return float(np.max(self.eigenvalues.real))


def as_matrix(m) -> np.ndarray:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix contains non-finite entries")
    return a


def symmetrize(m) -> np.ndarray:
    """Return (M + M')/2 after checking that M is square and nearly symmetric."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix is not square: {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > 1e-8 * scale:
        raise ShapeError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def eig_symmetric(m) -> EigenReport:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending."""
    s = symmetrize(m)
    w, v = np.linalg.eigh(s)
    order = np.argsort(w)[::-1]
    return EigenReport(w[order], v[:, order])


def eig_general(m) -> EigenReport:
    """Eigenvalues of a square matrix sorted by real part, descending."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix is not square: {a.shape}")
    w = np.linalg.eigvals(a)
    return EigenReport(w[np.argsort(-w.real, kind="stable")])


def max_eigenvalue(m) -> float:
    s = symmetrize(m)
    if s.size == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(s)[-1])


def is_negative_semidefinite(m, tol: float = EIG_TOL) -> bool:
    return max_eigenvalue(m) <= tol


def is_positive_semidefinite(m, tol: float = EIG_TOL) -> bool:
    return max_eigenvalue(-as_matrix(m)) <= tol


@dataclass(frozen=True)
class OdePath:
    t: np.ndarray
    x: np.ndarray


def integrate_ode(
    f: Callable[[float, np.ndarray], np.ndarray],
    x0,
    t0: float,
    tn: float,
    dt: float,
    blowup: float = BLOWUP,
) -> OdePath:
    """Fixed-step classical RK4 from t0 to tn.

    The last step is shortened so that the final sample lands exactly on tn.
    Raises DivergenceError when the infinity norm of the state exceeds
    `blowup`; the error carries the first sample time at which it did.
    """
    if dt <= 0 or tn <= t0:
        raise InputError("need dt > 0 and tn > t0")
    x = np.array(x0, dtype=float).reshape(-1)
    nfull = int(np.floor((tn - t0) / dt + 1e-9))
    times = t0 + dt * np.arange(nfull + 1)
    if tn - times[-1] > 1e-12 * max(1.0, abs(tn)):
        times = np.append(times, tn)
    else:
        times[-1] = tn
    xs = np.empty((times.size, x.size))
    xs[0] = x
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = f(t, x)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norm = float(np.max(np.abs(x))) if x.size else 0.0
        if not np.isfinite(norm) or norm > blowup:
            raise DivergenceError(float(times[k + 1]), norm)
        xs[k + 1] = x
    return OdePath(times, xs)


def quadrature(t: Sequence[float], values) -> float:
    """Composite trapezoid rule on the given (possibly non-uniform) samples."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise InputError("need at least two samples")
    if v.shape[0] != t.size:
        raise ShapeError("sample count mismatch")
    if np.any(np.diff(t) <= 0):
        raise InputError("sample times must be strictly increasing")
    return float(np.trapezoid(v, t, axis=0))
