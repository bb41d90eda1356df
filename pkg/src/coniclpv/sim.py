"""Time-domain simulation of open- and closed-loop LPV dynamics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from . import _kernels
from .errors import DivergenceError, InconsistentTraceError, InputError, ShapeError
from .lpv import InputClass, LpvSystem, ParameterTrajectory
from .numerics import BLOWUP, quadrature

DT = 1e-3
RELATION_TOL = 1e-9
KINDS = ("constant", "sinusoid", "noise", "zero")


@dataclass(frozen=True)
class SignalSpec:
    kind: str
    inputs: InputClass | None
    m: int = 1
    seed: int = 0
    dt: float = DT
    allow_zero: bool = False  # diagnostic only; violates the nonvanishing-input assumption

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown signal kind {self.kind!r}")
        if self.kind == "zero" and not self.allow_zero:
            raise InputError("zero inputs need allow_zero=True")
        if self.kind != "zero" and self.inputs is None:
            raise InputError("an input class is required")
        if self.dt <= 0 or self.m < 1:
            raise InputError("need dt > 0 and m >= 1")


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled signal, linearly interpolated between samples."""

    t: np.ndarray
    values: np.ndarray  # (k, m)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def __call__(self, tq) -> np.ndarray:
        tq = np.asarray(tq, dtype=float)
        if tq.size and (tq.min() < self.t[0] - 1e-9 or tq.max() > self.t[-1] + 1e-9):
            raise InputError("signal does not cover the requested times")
        return np.stack([np.interp(tq, self.t, self.values[:, j]) for j in range(self.m)], axis=-1)

    @classmethod
    def from_function(cls, f, t0, tn, dt=DT, m=1):
        t = _time_grid(t0, tn, dt)
        return cls(t, np.asarray([np.atleast_1d(f(tk)) for tk in t], dtype=float).reshape(t.size, m))

    def concat(self, other: "Signal") -> "Signal":
        if self.t.shape != other.t.shape or np.any(self.t != other.t):
            raise ShapeError("signals must share a time grid")
        return Signal(self.t, np.hstack([self.values, other.values]))


def _time_grid(t0, tn, dt, extra=()):
    n = int(np.floor((tn - t0) / dt + 1e-9))
    t = t0 + dt * np.arange(n + 1)
    if tn - t[-1] > 1e-9 * dt:
        t = np.append(t, tn)
    else:
        t[-1] = tn
    if len(extra):
        t = np.union1d(t, np.clip(np.asarray(extra, dtype=float), t0, tn))
        keep = np.concatenate([[True], np.diff(t) > 1e-9 * dt])
        keep[-1] = True
        t = t[keep]
        if t.size > 2 and t[-1] - t[-2] <= 1e-9 * dt:
            t = np.delete(t, -2)
    return t


def _clamp(u, lo, hi, rng):
    """Radial clamp of each sample's norm into [lo, hi]."""
    norms = np.linalg.norm(u, axis=1)
    out = u.copy()
    zero = norms == 0
    if np.any(zero):
        d = rng.standard_normal((int(zero.sum()), u.shape[1]))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out[zero] = d * lo
        norms = np.linalg.norm(out, axis=1)
    target = np.clip(norms, lo, hi)
    return out * (target / norms)[:, None]


def generate_input(spec: SignalSpec, horizon: float, t0: float = 0.0) -> Signal:
    """Seeded input signal whose samples satisfy the pointwise norm bounds."""
    if horizon <= 0:
        raise InputError("horizon must be positive")
    t = _time_grid(t0, t0 + horizon, spec.dt)
    m = spec.m
    if spec.kind == "zero":
        return Signal(t, np.zeros((t.size, m)))
    lo, hi = spec.inputs.u_low, spec.inputs.u_high
    mid = 0.5 * (lo + hi)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "constant":
        d = rng.standard_normal(m)
        d /= np.linalg.norm(d)
        u = np.tile(mid * d, (t.size, 1))
    elif spec.kind == "sinusoid":
        k = 3
        w = rng.uniform(0.1, 5.0, (k, m))
        ph = rng.uniform(0, 2 * np.pi, (k, m))
        amp = rng.uniform(0.5, 1.0, (k, m))
        u = np.einsum("km,tkm->tm", amp, np.sin(w[None] * (t - t0)[:, None, None] + ph[None]))
        u *= hi / max(np.max(np.abs(u)), 1e-12)
    else:
        tau = 0.5
        a = np.exp(-spec.dt / tau)
        raw = rng.standard_normal((t.size, m))
        u = lfilter([1 - a], [1, -a], raw, axis=0)
        u *= mid / max(np.std(u), 1e-12)
    return Signal(t, _clamp(u, lo, hi, rng))


# ---------------------------------------------------------------------------


@dataclass
class Trace:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    rho: np.ndarray

    def columns(self):
        cols = {"t": self.t}
        for name, arr in (("x", self.x), ("u", self.u), ("y", self.y), ("rho", self.rho)):
            for j in range(arr.shape[1]):
                cols[f"{name}{j + 1}"] = arr[:, j]
        return cols

    def to_csv(self, path):
        write_csv(path, self.columns())


@dataclass
class LoopTrace:
    t: np.ndarray
    x_p: np.ndarray
    x_c: np.ndarray
    u_c: np.ndarray
    u_p: np.ndarray
    e_c: np.ndarray
    e_p: np.ndarray
    y_c: np.ndarray
    y_p: np.ndarray
    rho: np.ndarray = field(default=None)

    @property
    def u(self) -> np.ndarray:
        return np.hstack([self.u_c, self.u_p])

    @property
    def y(self) -> np.ndarray:
        return np.hstack([self.y_c, self.y_p])

    @property
    def e(self) -> np.ndarray:
        return np.hstack([self.e_c, self.e_p])

    def relation_error(self) -> float:
        r1 = np.max(np.abs(self.e_c - (self.u_c + self.y_p)), initial=0.0)
        r2 = np.max(np.abs(self.e_p - (self.u_p - self.y_c)), initial=0.0)
        return float(max(r1, r2))

    def check_relations(self, tol=RELATION_TOL):
        scale = max(1.0, float(np.max(np.abs(self.e), initial=0.0)), float(np.max(np.abs(self.y), initial=0.0)))
        err = self.relation_error()
        if err > tol * scale:
            raise InconsistentTraceError(f"interconnection relations violated by {err:.3e}")

    def columns(self):
        cols = {"t": self.t}
        for name in ("x_p", "x_c", "u_c", "u_p", "e_c", "e_p", "y_c", "y_p"):
            arr = getattr(self, name)
            for j in range(arr.shape[1]):
                cols[f"{name}{j + 1}"] = arr[:, j]
        return cols

    def to_csv(self, path):
        write_csv(path, self.columns())


def write_csv(path, columns: dict):
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def _stage_parameters(traj: ParameterTrajectory, t):
    """rho at the start, midpoint and end of each step, all on the step's own segment."""
    t0, t1 = t[:-1], t[1:]
    tm = 0.5 * (t0 + t1)
    seg = traj._segment(tm)
    bp = traj.breakpoints[seg]
    c = traj.coeffs[seg]
    deg = c.shape[2]

    def ev(tt):
        powers = np.power.outer(tt - bp, np.arange(deg))
        return np.einsum("kd,kpd->kp", powers, c)

    return ev(t0), ev(tm), ev(t1)


def _integrate(sys, traj, u: Signal, x0, dt, blowup, use_numba):
    if traj.tn <= traj.t0:
        raise InputError("empty horizon")
    if u.m != sys.m:
        raise ShapeError(f"input has {u.m} channels, system expects {sys.m}")
    if u.t[0] > traj.t0 + 1e-9 or u.t[-1] < traj.tn - 1e-9:
        raise InputError("input does not cover the trajectory horizon")
    t = _time_grid(traj.t0, traj.tn, dt, traj.breakpoints[1:-1])
    r0, rm, r1 = _stage_parameters(traj, t)
    N = t.size - 1
    A, B, _, _ = sys.evaluate_many(np.vstack([r0, rm, r1]))
    A0, Am, A1 = A[:N], A[N : 2 * N], A[2 * N :]
    B0, Bm, B1 = B[:N], B[N : 2 * N], B[2 * N :]
    tm = 0.5 * (t[:-1] + t[1:])
    un = u(t)
    um = u(tm)
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(sys.n)
    X, esc = _kernels.rk4_linear(np.diff(t), A0, Am, A1, B0, Bm, B1, un[:-1], um, un[1:], x0, blowup, use_numba)
    if esc >= 0:
        raise DivergenceError(float(t[esc]), float(np.max(np.abs(X[esc]))))
    return t, X, un, traj(t)


def simulate_open_loop(
    sys: LpvSystem, traj: ParameterTrajectory, u: Signal, x0=None, dt: float = DT, blowup: float = BLOWUP, use_numba=None
) -> Trace:
    """RK4 along rho(t); output map applied at every sample (right-continuous rho)."""
    t, X, un, rho = _integrate(sys, traj, u, x0, dt, blowup, use_numba)
    _, _, C, D = sys.evaluate_many(rho)
    y = np.einsum("kij,kj->ki", C, X) + np.einsum("kij,kj->ki", D, un)
    return Trace(t, X, un, y, rho)


def simulate_feedback(cl, traj: ParameterTrajectory, u_c: Signal, u_p: Signal, x0=None, dt: float = DT, blowup=BLOWUP, use_numba=None):
    """Closed-loop run returning every loop signal; relations re-checked."""
    U = u_c.concat(u_p)
    t, X, un, rho = _integrate(cl, traj, U, x0, dt, blowup, use_numba)
    maps = cl.signal_maps_many(rho)
    z = np.hstack([X, un])
    sig = {k: np.einsum("kij,kj->ki", M, z) for k, M in maps.items()}
    npl = cl.plant.n
    mc = u_c.m
    trace = LoopTrace(
        t, X[:, :npl], X[:, npl:], un[:, :mc], un[:, mc:], sig["e_c"], sig["e_p"], sig["y_c"], sig["y_p"], rho
    )
    trace.check_relations()
    return trace


def empirical_l2_gain(traces: Sequence) -> float:
    """max over traces of sqrt(int |y|^2 / int |u|^2)."""
    if not len(traces):
        raise InputError("no traces")
    best = 0.0
    for tr in traces:
        eu = quadrature(tr.t, np.sum(tr.u**2, axis=1))
        if eu <= 0:
            raise InputError("trace has zero input energy")
        ey = quadrature(tr.t, np.sum(tr.y**2, axis=1))
        best = max(best, float(np.sqrt(ey / eu)))
    return best
