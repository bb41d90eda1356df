"""LPV plants, parameter bounds, parameter trajectories and input classes."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, InputError, ShapeError

BOX_TOL = 1e-9


def _stack(mats, shape, label):
    out = np.asarray(mats, dtype=float)
    if out.ndim == 2:
        out = out[None]
    if out.shape[1:] != shape:
        raise ShapeError(f"{label} matrices have shape {out.shape[1:]}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise InputError(f"{label} has non-finite entries")
    return out


class LpvSystem:
    """State-space matrices as functions of a parameter vector in a box.

    Subclasses implement `_evaluate_many(rhos)` returning stacked matrices.
    The box is inclusive; `evaluate` refuses to extrapolate outside it.
    """

    n: int
    m: int
    p: int
    lo: np.ndarray
    hi: np.ndarray

    def check_rho(self, rho) -> np.ndarray:
        r = np.atleast_1d(np.asarray(rho, dtype=float))
        if r.shape != (self.p,):
            raise ShapeError(f"parameter must have length {self.p}, got {r.shape}")
        if np.any(r < self.lo - BOX_TOL) or np.any(r > self.hi + BOX_TOL):
            raise DomainError(f"rho={r} outside parameter box [{self.lo}, {self.hi}]")
        return np.clip(r, self.lo, self.hi)

    def evaluate(self, rho):
        """Return (A, B, C, D) at a single parameter value."""
        r = self.check_rho(rho)
        A, B, C, D = self._evaluate_many(r[None, :])
        return A[0], B[0], C[0], D[0]

    def evaluate_many(self, rhos):
        """Vectorised evaluation; `rhos` has shape (k, p)."""
        r = np.asarray(rhos, dtype=float).reshape(-1, self.p)
        if np.any(r < self.lo - BOX_TOL) or np.any(r > self.hi + BOX_TOL):
            raise DomainError("parameter samples leave the parameter box")
        return self._evaluate_many(np.clip(r, self.lo, self.hi))

    def _evaluate_many(self, rhos):
        raise NotImplementedError

    def frozen(self, rho) -> "AffineLpv":
        A, B, C, D = self.evaluate(rho)
        return AffineLpv.lti(A, B, C, D)

    @property
    def has_feedthrough(self) -> bool:
        return True


class AffineLpv(LpvSystem):
    """M(rho) = M0 + sum_i rho_i M_i for each of A, B, C, D."""

    def __init__(self, A, B, C, D, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.p = self.lo.size
        if self.hi.shape != self.lo.shape or np.any(self.lo > self.hi):
            raise InputError("invalid parameter box")
        A0 = np.asarray(A[0] if np.ndim(A) == 3 else A, dtype=float)
        self.n = np.atleast_2d(A0).shape[0]
        D0 = np.atleast_2d(np.asarray(D[0] if np.ndim(D) == 3 else D, dtype=float))
        if D0.shape[0] != D0.shape[1]:
            raise ShapeError("input and output dimensions must be equal")
        self.m = D0.shape[0]
        n, m = self.n, self.m
        self.A = self._terms(A, (n, n), "A")
        self.B = self._terms(B, (n, m), "B")
        self.C = self._terms(C, (m, n), "C")
        self.D = self._terms(D, (m, m), "D")

    def _terms(self, mats, shape, label):
        arr = np.asarray(mats, dtype=float)
        if arr.ndim < 3:
            arr = np.atleast_2d(arr).reshape(shape)[None]
        arr = _stack(arr, shape, label)
        if arr.shape[0] == 1:
            arr = np.concatenate([arr, np.zeros((self.p,) + shape)])
        if arr.shape[0] != self.p + 1:
            raise ShapeError(f"{label} needs 1 or {self.p + 1} terms, got {arr.shape[0]}")
        return arr

    @classmethod
    def lti(cls, A, B, C, D, lo=(0.0,), hi=(0.0,)):
        """A parameter-independent system over a degenerate box."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        n, m = A.shape[0], D.shape[0]
        return cls(A, np.reshape(B, (n, m)), np.reshape(C, (m, n)), D, lo, hi)

    def _evaluate_many(self, rhos):
        w = np.hstack([np.ones((rhos.shape[0], 1)), rhos])
        return tuple(np.einsum("kj,jab->kab", w, M) for M in (self.A, self.B, self.C, self.D))

    def to_dict(self):
        return {
            "form": "affine",
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
        }


class GridLpv(LpvSystem):
    """Vertex matrices on a rectilinear grid with multilinear interpolation."""

    def __init__(self, axes: Sequence[Sequence[float]], A, B, C, D):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        for ax in self.axes:
            if ax.ndim != 1 or ax.size < 1 or np.any(np.diff(ax) <= 0):
                raise InputError("grid axes must be strictly increasing")
        self.p = len(self.axes)
        self.lo = np.array([ax[0] for ax in self.axes])
        self.hi = np.array([ax[-1] for ax in self.axes])
        gshape = tuple(ax.size for ax in self.axes)
        A = np.asarray(A, dtype=float)
        D = np.asarray(D, dtype=float)
        self.n = A.shape[-1]
        self.m = D.shape[-1]
        if D.shape[-2] != D.shape[-1]:
            raise ShapeError("input and output dimensions must be equal")
        n, m = self.n, self.m
        self.values = {}
        for label, M, shape in (("A", A, (n, n)), ("B", B, (n, m)), ("C", C, (m, n)), ("D", D, (m, m))):
            M = np.asarray(M, dtype=float)
            if M.shape != gshape + shape:
                raise ShapeError(f"{label} grid has shape {M.shape}, expected {gshape + shape}")
            if not np.all(np.isfinite(M)):
                raise InputError(f"{label} has non-finite entries")
            self.values[label] = M
        # a length-1 axis cannot be interpolated; drop it
        self._live = [i for i, ax in enumerate(self.axes) if ax.size > 1]
        self._interp = {}
        for label, M in self.values.items():
            sq = M.reshape(tuple(s for s in gshape if s > 1) + M.shape[self.p:])
            if self._live:
                self._interp[label] = RegularGridInterpolator(
                    [self.axes[i] for i in self._live], sq, method="linear"
                )
            else:
                self._interp[label] = sq

    def _evaluate_many(self, rhos):
        out = []
        for label in "ABCD":
            f = self._interp[label]
            if self._live:
                out.append(np.asarray(f(rhos[:, self._live])))
            else:
                out.append(np.broadcast_to(f, (rhos.shape[0],) + f.shape).copy())
        return tuple(out)

    def to_dict(self):
        return {
            "form": "grid",
            "axes": [ax.tolist() for ax in self.axes],
            **{k: v.tolist() for k, v in self.values.items()},
        }


def system_from_dict(d) -> LpvSystem:
    if d["form"] == "affine":
        return AffineLpv(d["A"], d["B"], d["C"], d["D"], d["lo"], d["hi"])
    if d["form"] == "grid":
        return GridLpv(d["axes"], d["A"], d["B"], d["C"], d["D"])
    raise InputError(f"unknown system form {d['form']!r}")


@dataclass(frozen=True)
class ParameterBounds:
    """Componentwise range and rate bounds; infinite rates mean unbounded."""

    rho_min: np.ndarray
    rho_max: np.ndarray
    rate_min: np.ndarray
    rate_max: np.ndarray

    def __init__(self, rho_min, rho_max, rate_min=-np.inf, rate_max=np.inf, p=None):
        lo = np.atleast_1d(np.asarray(rho_min, dtype=float))
        hi = np.atleast_1d(np.asarray(rho_max, dtype=float))
        p = p or max(lo.size, hi.size)
        lo, hi = np.broadcast_to(lo, (p,)).copy(), np.broadcast_to(hi, (p,)).copy()
        rl = np.broadcast_to(np.asarray(rate_min, dtype=float), (p,)).copy()
        rh = np.broadcast_to(np.asarray(rate_max, dtype=float), (p,)).copy()
        if np.any(lo >= hi):
            raise InputError("need rho_min < rho_max componentwise")
        if np.any(rl > rh):
            raise InputError("need rate_min <= rate_max")
        if np.any(rl > 0) or np.any(rh < 0):
            warnings.warn("rate bounds exclude zero: no constant trajectory is admissible")
        object.__setattr__(self, "rho_min", lo)
        object.__setattr__(self, "rho_max", hi)
        object.__setattr__(self, "rate_min", rl)
        object.__setattr__(self, "rate_max", rh)

    @property
    def p(self) -> int:
        return self.rho_min.size

    @property
    def rate_unbounded(self) -> bool:
        return bool(np.all(np.isinf(self.rate_min)) and np.all(np.isinf(self.rate_max)))

    @classmethod
    def for_system(cls, sys: LpvSystem, rate_min=-np.inf, rate_max=np.inf):
        lo, hi = sys.lo.copy(), sys.hi.copy()
        degenerate = lo >= hi
        hi[degenerate] = lo[degenerate] + 1e-12
        return cls(lo, hi, rate_min, rate_max)

    def to_dict(self):
        def enc(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "rho_min": self.rho_min.tolist(),
            "rho_max": self.rho_max.tolist(),
            "rate_min": enc(self.rate_min),
            "rate_max": enc(self.rate_max),
        }

    @classmethod
    def from_dict(cls, d):
        def dec(v, default):
            if v is None:
                return default
            if isinstance(v, list):
                return [default if x is None else x for x in v]
            return v

        return cls(d["rho_min"], d["rho_max"], dec(d.get("rate_min"), -np.inf), dec(d.get("rate_max"), np.inf))


@dataclass(frozen=True)
class InputClass:
    """Pointwise bounds u_low^2 <= |u(t)|^2 <= u_high^2."""

    u_low: float
    u_high: float

    def __post_init__(self):
        if not (0 < self.u_low <= self.u_high < np.inf):
            raise InputError("need 0 < u_low <= u_high < inf")


class ParameterTrajectory:
    """Piecewise-polynomial parameter path on [t0, tn].

    `coeffs[i]` has shape (p, deg+1) with increasing powers of the local time
    t - breakpoints[i]. Discrete trajectories are piecewise constant and
    right-continuous; all others must be continuous at the breakpoints.
    """

    def __init__(self, breakpoints, coeffs, discrete: bool = False):
        bp = np.asarray(breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise InputError("breakpoints must be strictly increasing, at least two")
        c = np.asarray(coeffs, dtype=float)
        if c.ndim == 2:
            c = c[:, None, :]
        if c.ndim != 3 or c.shape[0] != bp.size - 1:
            raise ShapeError("coeffs must have shape (segments, p, degree+1)")
        if c.shape[2] > 4:
            raise InputError("segment polynomials are limited to degree 3")
        if discrete and np.any(c[:, :, 1:] != 0):
            raise InputError("discrete trajectories must be piecewise constant")
        self.breakpoints = bp
        self.coeffs = c
        self.discrete = bool(discrete)
        if not self.discrete:
            h = np.diff(bp)[:-1]
            ends = np.stack([self._poly(c[i], h[i]) for i in range(len(h))]) if len(h) else np.zeros((0, self.p))
            starts = c[1:, :, 0]
            if ends.size and np.max(np.abs(ends - starts)) > 1e-9 * max(1.0, np.max(np.abs(starts))):
                raise InputError("trajectory is discontinuous; mark it discrete or fix the segments")

    @property
    def p(self) -> int:
        return self.coeffs.shape[1]

    @property
    def t0(self) -> float:
        return float(self.breakpoints[0])

    @property
    def tn(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def horizon(self) -> float:
        return self.tn - self.t0

    @property
    def continuity(self) -> list[bool]:
        return [not self.discrete] * (self.breakpoints.size - 2)

    @staticmethod
    def _poly(c, tau):
        powers = np.power.outer(np.asarray(tau, dtype=float), np.arange(c.shape[-1]))
        return powers @ c.T

    def _segment(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, self.breakpoints.size - 2)

    def __call__(self, t):
        """rho(t); shape (p,) for scalar t, else (k, p)."""
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        idx = self._segment(tt)
        tau = tt - self.breakpoints[idx]
        deg = self.coeffs.shape[2]
        powers = np.power.outer(tau, np.arange(deg))
        out = np.einsum("kd,kpd->kp", powers, self.coeffs[idx])
        return out[0] if scalar else out

    def derivative(self, t):
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        idx = self._segment(tt)
        tau = tt - self.breakpoints[idx]
        deg = self.coeffs.shape[2]
        if deg == 1:
            out = np.zeros((tt.size, self.p))
        else:
            k = np.arange(1, deg)
            powers = np.power.outer(tau, k - 1) * k
            out = np.einsum("kd,kpd->kp", powers, self.coeffs[idx][:, :, 1:])
        return out[0] if scalar else out

    def segment_values(self) -> np.ndarray:
        """Constant value per segment (discrete trajectories)."""
        return self.coeffs[:, :, 0].copy()

    # constructors

    @classmethod
    def constant(cls, value, t0=0.0, tn=1.0):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls([t0, tn], v[None, :, None])

    @classmethod
    def ramp(cls, start, end, t0=0.0, tn=1.0):
        s = np.atleast_1d(np.asarray(start, dtype=float))
        e = np.atleast_1d(np.asarray(end, dtype=float))
        slope = (e - s) / (tn - t0)
        return cls([t0, tn], np.stack([s, slope], axis=-1)[None])

    @classmethod
    def piecewise_constant(cls, breakpoints, values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        return cls(breakpoints, v[:, :, None], discrete=True)

    @classmethod
    def piecewise_linear(cls, times, values):
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        slopes = np.diff(v, axis=0) / np.diff(t)[:, None]
        return cls(t, np.stack([v[:-1], slopes], axis=-1))

    def to_dict(self):
        return {
            "breakpoints": self.breakpoints.tolist(),
            "coefficients": self.coeffs.tolist(),
            "discrete": self.discrete,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["breakpoints"], d["coefficients"], bool(d.get("discrete", False)))


@dataclass
class SegmentViolation:
    segment: int
    range_violation: float
    rate_violation: float


@dataclass
class AdmissibilityReport:
    segments: list[SegmentViolation] = field(default_factory=list)
    rate_checked: bool = True

    @property
    def admissible(self) -> bool:
        return all(s.range_violation <= 0 and s.rate_violation <= 0 for s in self.segments)

    @property
    def max_range_violation(self) -> float:
        return max(s.range_violation for s in self.segments)

    @property
    def max_rate_violation(self) -> float:
        return max(s.rate_violation for s in self.segments)


def _critical_points(c, h):
    """Local times in [0, h] where a polynomial with coefficients c may peak."""
    pts = [0.0, h]
    if c.size > 2:
        dc = c[1:] * np.arange(1, c.size)
        roots = np.roots(dc[::-1]) if np.any(dc[1:] != 0) else []
        pts += [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and 0 <= r.real <= h]
    return np.array(pts)


def validate_trajectory(traj: ParameterTrajectory, bounds: ParameterBounds, points_per_segment: int = 1000):
    """Range and rate admissibility, per segment.

    Violations are max(bound excess) over a dense grid plus the exact extrema
    of each segment polynomial; positive means violated. Rates are not checked
    for discrete trajectories (their jumps have no derivative).
    """
    if traj.p != bounds.p:
        raise ShapeError("trajectory and bounds have different parameter dimensions")
    report = AdmissibilityReport(rate_checked=not traj.discrete)
    bp = traj.breakpoints
    for i in range(bp.size - 1):
        h = bp[i + 1] - bp[i]
        taus = [np.linspace(0.0, h, points_per_segment)]
        drate_taus = [np.linspace(0.0, h, points_per_segment)]
        for j in range(traj.p):
            c = traj.coeffs[i, j]
            taus.append(_critical_points(c, h))
            if c.size > 1:
                drate_taus.append(_critical_points(c[1:] * np.arange(1, c.size), h))
        tau = np.concatenate(taus)
        tau_r = np.concatenate(drate_taus)
        vals = traj._poly(traj.coeffs[i], tau)
        rng = max(float(np.max(bounds.rho_min - vals)), float(np.max(vals - bounds.rho_max)))
        rate = -np.inf
        if not traj.discrete:
            c = traj.coeffs[i]
            if c.shape[1] > 1:
                dc = c[:, 1:] * np.arange(1, c.shape[1])
                d = traj._poly(dc, tau_r)
            else:
                d = np.zeros((tau_r.size, traj.p))
            with np.errstate(invalid="ignore"):
                rate = max(float(np.max(bounds.rate_min - d)), float(np.max(d - bounds.rate_max)))
        report.segments.append(SegmentViolation(i, rng, rate))
    return report


def discretize_trajectory(traj: ParameterTrajectory, mesh_norm: float) -> ParameterTrajectory:
    """Uniform partition with |P| <= mesh_norm; each cell tagged at its midpoint."""
    if mesh_norm <= 0:
        raise InputError("mesh_norm must be positive")
    count = max(1, math.ceil(traj.horizon / mesh_norm - 1e-12))
    edges = np.linspace(traj.t0, traj.tn, count + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return ParameterTrajectory.piecewise_constant(edges, traj(mids))


def trajectory_box_gap(traj: ParameterTrajectory, sys: LpvSystem, samples: int = 2000) -> float:
    """Largest excursion of the sampled trajectory outside the system box."""
    t = np.linspace(traj.t0, traj.tn, samples)
    vals = traj(t)
    return float(max(np.max(sys.lo - vals), np.max(vals - sys.hi)))
