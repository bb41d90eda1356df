"""Conic sector bounds, conicity indices and average conicity tests.

Sign convention for the QSR supply: w(u, y) = y'Qy + 2y'Su + u'Ru with
Q = -(1/b)I, S = (1 + a/b)/2 I, R = -aI. The dissipation LMI used for both
indices is the one whose feasibility means d/dt(x'Px) <= w, i.e.

    [A'P + PA + Pdot - C'QC,   PB - C'S - C'QD        ]
    [       *              ,  -D'QD - D'S - S'D - R  ]

which coincides with the sector LMI of the bounds computation after
multiplying by b.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import sdp
from .errors import (
    CoverageError,
    InputError,
    NoFiniteIndexError,
    NotConicError,
    RegionMisclassifiedError,
    ShapeError,
)
from .lpv import InputClass, LpvSystem, ParameterBounds, ParameterTrajectory
from .numerics import quadrature
from .sdp import Affine, GridSpec, SdpProblem, bmat

log = logging.getLogger(__name__)

EPS_R = 1e-6
R_MAX = 1e3
EPS_FLOOR = -1e6
ALPHA_CAP = 1e6
INDEX_TOL = 1e-6
ALPHA_FLOOR = 1e-9
# slack for partition end points found by bisection
COVER_TOL = 1e-6


@dataclass(frozen=True)
class ConicSector:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise InputError(f"invalid sector [{self.a}, {self.b}]: need a < b")

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def radius(self) -> float:
        return 0.5 * (self.b - self.a)

    @classmethod
    def from_center_radius(cls, c, r):
        return cls(c - r, c + r)

    def qsr(self, m: int = 1):
        if self.b == 0:
            raise InputError("sector with b = 0 has no supply rate")
        I = np.eye(m)
        return -(1.0 / self.b) * I, 0.5 * (1.0 + self.a / self.b) * I, -self.a * I

    def kernel(self, m: int = 1) -> np.ndarray:
        """The 2m x 2m supply-rate matrix acting on the stacked (y, u)."""
        Q, S, R = self.qsr(m)
        return np.block([[Q, S], [S.T, R]])

    def to_dict(self):
        return {"a": self.a, "b": self.b}


def supply_rate(sector: ConicSector, u, y) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if u.shape != y.shape or u.ndim != 1:
        raise ShapeError("u and y must be vectors of equal length")
    v = np.concatenate([y, u])
    return float(v @ sector.kernel(u.size) @ v)


def supply_rate_series(sector: ConicSector, u, y) -> np.ndarray:
    """w(u(t_k), y(t_k)) for sample arrays of shape (k, m)."""
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    if u.shape != y.shape:
        raise ShapeError("u and y sample arrays differ in shape")
    if sector.b == 0:
        raise InputError("sector with b = 0 has no supply rate")
    ab = sector.a / sector.b
    return (
        -(1.0 / sector.b) * np.einsum("ki,ki->k", y, y)
        + (1.0 + ab) * np.einsum("ki,ki->k", y, u)
        - sector.a * np.einsum("ki,ki->k", u, u)
    )


def windowed_integral(t, values, t1, t2) -> float:
    """Trapezoid integral of sampled values over [t1, t2], interpolating the ends."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t1 < t[0] - 1e-12 or t2 > t[-1] + 1e-12 or not t1 < t2:
        raise InputError(f"window [{t1}, {t2}] not inside trace [{t[0]}, {t[-1]}]")
    inside = (t > t1) & (t < t2)
    tt = np.concatenate([[t1], t[inside], [t2]])
    vv = np.concatenate([[np.interp(t1, t, v)], v[inside], [np.interp(t2, t, v)]])
    return quadrature(tt, vv)


def iqc_integral(sector: ConicSector, trace, t1=None, t2=None) -> float:
    """Integral of the supply rate along a sampled (t, u, y) trace."""
    t, u, y = trace.t, trace.u, trace.y
    t1 = t[0] if t1 is None else t1
    t2 = t[-1] if t2 is None else t2
    return windowed_integral(t, supply_rate_series(sector, u, y), t1, t2)


def dissipation_lmi(A, B, C, D, Q, S, R, P: Affine, Pdot: Affine | None = None) -> Affine:
    """Affine matrix whose <= 0 means d/dt(x'Px) <= y'Qy + 2y'Su + u'Ru."""
    top = A.T @ P + P @ A - C.T @ Q @ C
    if Pdot is not None:
        top = top + Pdot
    off = P @ B - C.T @ S - C.T @ Q @ D
    bot = -(D.T @ Q @ D) - D.T @ S - S.T @ D - R
    return bmat([[top, off], [off.T, bot]])


def sector_lmi(A, B, C, D, q1, q2, P: Affine, Pdot: Affine | None = None) -> Affine:
    """Sector-bound LMI; q1 = (a+b)/2 and q2 = ab may be constants or variables."""
    m = D.shape[0]
    top = A.T @ P + P @ A + C.T @ C
    if Pdot is not None:
        top = top + Pdot
    off = P @ B + C.T @ D - q1 * C.T
    bot = Affine.wrap(D.T @ D) - q1 * (D + D.T) + q2 * np.eye(m)
    return bmat([[top, off], [off.T, bot]])


def _region_bounds(sys: LpvSystem, region, bounds: ParameterBounds | None):
    lo, hi = (sys.lo, sys.hi) if region is None else (np.atleast_1d(region[0]), np.atleast_1d(region[1]))
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo < sys.lo - 1e-9) or np.any(hi > sys.hi + 1e-9) or np.any(lo > hi):
        raise InputError("region must lie inside the parameter box")
    if bounds is None:
        bounds = ParameterBounds.for_system(sys)
    return lo, hi, bounds


# ---------------------------------------------------------------------------
# conic bounds


@dataclass
class BoundsCertificate:
    sector: ConicSector
    region: tuple
    nodes: np.ndarray
    storage: list[np.ndarray]
    max_residual: float

    def to_dict(self):
        return {
            "sector": self.sector.to_dict(),
            "region": [np.asarray(r).tolist() for r in self.region],
            "nodes": self.nodes.tolist(),
            "storage": [np.asarray(P).tolist() for P in self.storage],
            "max_residual": self.max_residual,
        }


def _sector_problem(sys, lo, hi, bounds, grid, radius=None, sector=None, objective=False):
    prob = SdpProblem()
    if sector is None:
        q1, q2 = prob.scalar("q1"), prob.scalar("q2")
    else:
        q1, q2 = sector.center, sector.a * sector.b

    def build(rho, rd, P, Pdot):
        A, B, C, D = sys.evaluate(rho)
        yield sector_lmi(A, B, C, D, q1, q2, P, Pdot)

    prob, basis, nodes = sdp.assemble_gridded_lmi(build, bounds, grid, sys.n, region=(lo, hi), problem=prob)
    if sector is None:
        # q1^2 - q2 <= r^2 as a 2x2 Schur complement
        if objective:
            t = prob.scalar("r2")
            prob.add_psd(bmat([[np.eye(1), q1], [q1, t + q2]]), "radius")
            prob.minimize(t)
        else:
            prob.add_psd(bmat([[np.eye(1), q1], [q1, q2 + radius * radius]]), "radius")
    return prob, basis, nodes


def conic_feasible(sys: LpvSystem, sector: ConicSector, region=None, bounds=None, grid=GridSpec(), feas_tol=sdp.FEAS_TOL):
    """Feasibility of the sector LMI for a fixed sector over a region."""
    lo, hi, bounds = _region_bounds(sys, region, bounds)
    prob, basis, nodes = _sector_problem(sys, lo, hi, bounds, grid, sector=sector)
    sol = sdp.solve(prob, feas_tol)
    return sol.feasible, sol, basis, nodes


def is_conic_at(sys: LpvSystem, sector: ConicSector, rho, feas_tol=sdp.FEAS_TOL) -> bool:
    """Frozen-parameter classification used to partition trajectories."""
    r = np.atleast_1d(np.asarray(rho, dtype=float))
    bounds = ParameterBounds(r - 1.0, r + 1.0)
    ok, *_ = conic_feasible(sys, sector, region=(r, r), bounds=bounds, grid=GridSpec(1, 1), feas_tol=feas_tol)
    return ok


def find_conic_bounds(
    sys: LpvSystem,
    region=None,
    bounds: ParameterBounds | None = None,
    grid: GridSpec = GridSpec(),
    r_max: float = R_MAX,
    feas_tol: float = sdp.FEAS_TOL,
    rtol: float = 1e-7,
):
    """Tightest sector [a, b] certified by the sector LMI over a region.

    The radius is first minimised directly over (P, q1, q2), then refined
    by bisection on r where each step is a pure feasibility problem with
    q1 free. Raises NotConicError when no radius up to `r_max` is feasible.
    """
    lo, hi, bounds = _region_bounds(sys, region, bounds)

    def feasible(r):
        prob, basis, nodes = _sector_problem(sys, lo, hi, bounds, grid, radius=r)
        return sdp.solve(prob, feas_tol), prob, basis, nodes

    prob, _, _ = _sector_problem(sys, lo, hi, bounds, grid, objective=True)
    seed = sdp.solve(prob, feas_tol)
    if seed.feasible:
        r_hi = max(math.sqrt(max(seed.values["r2"], 0.0)), EPS_R)
    else:
        r_hi = r_max
    best = feasible(r_hi)
    while not best[0].feasible:
        if r_hi >= r_max:
            raise NotConicError(f"sector LMI infeasible for every radius up to {r_max}")
        r_hi = min(r_max, max(r_hi * 1.05, r_hi + 1e-6))
        best = feasible(r_hi)
    r_lo = max(EPS_R, r_hi * (1 - 1e-5))
    if r_hi > EPS_R:
        while True:
            trial = feasible(r_lo)
            if not trial[0].feasible:
                break
            best, r_hi = trial, r_lo
            if r_lo <= EPS_R:
                break
            r_lo = max(EPS_R, r_lo - 4 * (r_hi - r_lo) - 1e-4 * r_hi)
        while r_hi - r_lo > rtol * max(r_hi, 1e-3) and r_hi > EPS_R:
            mid = 0.5 * (r_lo + r_hi)
            trial = feasible(mid)
            if trial[0].feasible:
                best, r_hi = trial, mid
            else:
                r_lo = mid
    sol, prob, basis, nodes = best
    q1 = sol.values["q1"]
    q2 = sol.values["q2"]
    rad = max(math.sqrt(max(q1 * q1 - q2, 0.0)), EPS_R)
    sector = ConicSector(q1 - rad, q1 + rad)
    ok, check, cbasis, cnodes = conic_feasible(sys, sector, (lo, hi), bounds, grid, feas_tol)
    if not ok:
        # rounding in the recovered (a, b); fall back to the bracket radius
        sector = ConicSector(q1 - r_hi, q1 + r_hi)
        ok, check, cbasis, cnodes = conic_feasible(sys, sector, (lo, hi), bounds, grid, feas_tol)
        if not ok:
            raise NotConicError("recovered sector failed re-verification")
    cert = BoundsCertificate(sector, (lo, hi), cnodes, cbasis.values(check), check.max_residual)
    return sector, cert


# ---------------------------------------------------------------------------
# conicity indices


def _refine_max(feasible, seed, floor, ceil, tol):
    """Largest v in [floor, ceil] with feasible(v); returns (v, payload)."""
    seed = float(np.clip(seed, floor, ceil))
    step = max(10 * tol, 1e-4 * max(1.0, abs(seed)))
    lo = seed - step
    ok, pay = feasible(lo)
    while not ok:
        if lo <= floor:
            return None, None
        step *= 8
        lo = max(floor, seed - step)
        ok, pay = feasible(lo)
    best = (lo, pay)
    hi = min(ceil, seed + step)
    ok_hi, pay_hi = feasible(hi)
    while ok_hi:
        best = (hi, pay_hi)
        if hi >= ceil:
            return best
        lo = hi
        step *= 8
        hi = min(ceil, seed + step)
        ok_hi, pay_hi = feasible(hi)
    lo = best[0]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, pay = feasible(mid)
        if ok:
            lo, best = mid, (mid, pay)
        else:
            hi = mid
    return best


def _node_bounds(bounds: ParameterBounds, rho):
    r = np.atleast_1d(rho)
    return ParameterBounds(r - 1.0, r + 1.0, bounds.rate_min, bounds.rate_max)


def _index_problem(sys, sector, rho, bounds, kind, value, Q=None, S=None, R=None):
    if Q is None:
        Q, S, R = sector.qsr(sys.m)
    A, B, C, D = sys.evaluate(rho)
    nb = _node_bounds(bounds, rho)
    prob = SdpProblem()
    var = prob.scalar(kind) if value is None else value
    n, m = sys.n, sys.m

    def build(r, rd, P, Pdot):
        M = dissipation_lmi(A, B, C, D, Q, S, R, P, Pdot)
        if kind == "eps":
            yield M + var * np.eye(n + m)
            yield A.T @ P + P @ A + sdp.EPS_P * np.eye(n)
        else:
            relax = np.zeros((n + m, n + m))
            relax[n:, n:] = np.eye(m)
            yield M - var * relax

    r = np.atleast_1d(rho)
    prob, basis, _ = sdp.assemble_gridded_lmi(
        build, nb, GridSpec(1, 3), n, region=(r, r), problem=prob, storage_psd_only=(kind == "alpha")
    )
    if value is None:
        prob.minimize(-var if kind == "eps" else var)
    return prob, basis


def _eps_ceiling(sys, Q, S, R, rho):
    A, B, C, D = sys.evaluate(rho)
    bot = -(D.T @ Q @ D) - D.T @ S - S.T @ D - R
    return -float(np.linalg.eigvalsh(0.5 * (bot + bot.T))[-1])


@dataclass
class NodeIndex:
    rho: np.ndarray
    value: float
    storage: list[np.ndarray]
    max_residual: float


def eps_at(sys, sector, rho, bounds=None, feas_tol=sdp.FEAS_TOL, tol=INDEX_TOL, qsr=None) -> NodeIndex:
    """Largest eps with the conic index LMI and strict Lyapunov condition."""
    bounds = bounds or ParameterBounds.for_system(sys)
    Q, S, R = qsr or sector.qsr(sys.m)
    ceil = _eps_ceiling(sys, Q, S, R, rho)

    def feasible(v):
        prob, basis = _index_problem(sys, sector, rho, bounds, "eps", v, Q, S, R)
        sol = sdp.solve(prob, feas_tol)
        return sol.feasible, (sol, basis)

    prob, _ = _index_problem(sys, sector, rho, bounds, "eps", None, Q, S, R)
    seed_sol = sdp.solve(prob, feas_tol)
    if seed_sol.feasible:
        val, pay = _refine_max(feasible, seed_sol.values["eps"], EPS_FLOOR, ceil, tol)
    else:
        ok, pay = feasible(EPS_FLOOR)
        if not ok:
            raise RegionMisclassifiedError(f"conic index LMI infeasible at eps={EPS_FLOOR} for rho={rho}")
        val, pay = _refine_max(feasible, 0.5 * (EPS_FLOOR + ceil) if ceil < 0 else 0.0, EPS_FLOOR, ceil, tol)
    if val is None:
        raise RegionMisclassifiedError(f"conic index LMI infeasible at eps={EPS_FLOOR} for rho={rho}")
    sol, basis = pay
    return NodeIndex(np.atleast_1d(rho), float(val), basis.values(sol), sol.max_residual)


def alpha_at(
    sys, sector, rho, bounds=None, feas_tol=sdp.FEAS_TOL, tol=INDEX_TOL, qsr=None, allow_zero=False
) -> NodeIndex:
    """Smallest alpha > 0 making the nonconic index LMI feasible."""
    bounds = bounds or ParameterBounds.for_system(sys)
    Q, S, R = qsr or sector.qsr(sys.m)

    def feasible(v):
        prob, basis = _index_problem(sys, sector, rho, bounds, "alpha", v, Q, S, R)
        sol = sdp.solve(prob, feas_tol)
        return sol.feasible, (sol, basis)

    ok0, pay0 = feasible(0.0)
    if ok0:
        if not allow_zero:
            raise RegionMisclassifiedError(f"nonconic index LMI feasible at alpha=0 for rho={rho}")
        sol, basis = pay0
        return NodeIndex(np.atleast_1d(rho), ALPHA_FLOOR, basis.values(sol), sol.max_residual)
    okc, _ = feasible(ALPHA_CAP)
    if not okc:
        raise NoFiniteIndexError(f"no alpha <= {ALPHA_CAP:g} makes the nonconic LMI feasible at rho={rho}")
    prob, _ = _index_problem(sys, sector, rho, bounds, "alpha", None, Q, S, R)
    seed_sol = sdp.solve(prob, feas_tol)
    seed = seed_sol.values["alpha"] if seed_sol.feasible else 1.0

    # minimise alpha == maximise -alpha
    def neg(v):
        return feasible(-v)

    val, pay = _refine_max(neg, -seed, -ALPHA_CAP, 0.0, tol)
    sol, basis = pay
    return NodeIndex(np.atleast_1d(rho), max(-float(val), ALPHA_FLOOR), basis.values(sol), sol.max_residual)


@dataclass
class IndexTable:
    """Index values on a tensor grid over a parameter sub-box."""

    kind: str  # "eps" or "alpha"
    lo: np.ndarray
    hi: np.ndarray
    axes: list[np.ndarray]
    values: np.ndarray
    storage: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        self.axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in self.axes]
        shape = tuple(a.size for a in self.axes)
        self.values = np.asarray(self.values, dtype=float).reshape(shape)
        self._live = [i for i, a in enumerate(self.axes) if a.size > 1]
        if self._live:
            sq = self.values.reshape(tuple(shape[i] for i in self._live))
            self._f = RegularGridInterpolator([self.axes[i] for i in self._live], sq, method="linear")
        else:
            self._f = None

    def covers(self, rho, tol=1e-9) -> np.ndarray:
        r = np.atleast_2d(rho)
        return np.all((r >= self.lo - tol) & (r <= self.hi + tol), axis=1)

    def __call__(self, rho) -> np.ndarray:
        r = np.atleast_2d(np.asarray(rho, dtype=float))
        if not np.all(self.covers(r, COVER_TOL)):
            raise CoverageError(f"{self.kind} table over [{self.lo}, {self.hi}] does not cover the query")
        if self._f is None:
            return np.full(r.shape[0], float(self.values.reshape(-1)[0]))
        r = np.clip(r, self.lo, self.hi)
        return np.asarray(self._f(r[:, self._live]))

    def to_dict(self):
        return {
            "kind": self.kind,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "axes": [a.tolist() for a in self.axes],
            "values": self.values.reshape(-1).tolist(),
            "storage": [[np.asarray(P).tolist() for P in blocks] for blocks in self.storage],
            "residuals": list(self.residuals),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["lo"], d["hi"], d["axes"], d["values"], d.get("storage", []), d.get("residuals", []))


def _index_table(kind, sys, sector, region, bounds, grid, feas_tol, qsr=None, boundary=()):
    lo, hi, bounds = _region_bounds(sys, region, bounds)
    nodes, axes = grid.rho_nodes(lo, hi)
    vals, storage, res = [], [], []
    for rho in nodes:
        if kind == "eps":
            node = eps_at(sys, sector, rho, bounds, feas_tol, qsr=qsr)
        else:
            on_edge = any(np.any(np.abs(rho - np.atleast_1d(b)) < 1e-12) for b in boundary)
            node = alpha_at(sys, sector, rho, bounds, feas_tol, qsr=qsr, allow_zero=on_edge)
        vals.append(node.value)
        storage.append(node.storage)
        res.append(node.max_residual)
    return IndexTable(kind, lo, hi, axes, np.array(vals), storage, res)


def conicity_index_eps(sys, sector, region=None, bounds=None, grid=GridSpec(), feas_tol=sdp.FEAS_TOL, qsr=None):
    """Per-node maximal eps over a conic region, as an interpolating table."""
    return _index_table("eps", sys, sector, region, bounds, grid, feas_tol, qsr)


def nonconicity_index_alpha(
    sys, sector, region=None, bounds=None, grid=GridSpec(), feas_tol=sdp.FEAS_TOL, qsr=None, shared_faces=()
):
    """Per-node minimal alpha over a nonconic region.

    Nodes lying on `shared_faces` (parameter values where the region touches
    a conic one) may legitimately admit alpha = 0 and are floored instead of
    raising RegionMisclassifiedError.
    """
    return _index_table("alpha", sys, sector, region, bounds, grid, feas_tol, qsr, boundary=shared_faces)


# ---------------------------------------------------------------------------
# certificates and partitions


@dataclass
class ConicityCertificate:
    sector: ConicSector
    eps_tables: list[IndexTable] = field(default_factory=list)
    alpha_tables: list[IndexTable] = field(default_factory=list)
    grid: GridSpec = GridSpec()

    def _lookup(self, tables, rho):
        r = np.atleast_2d(rho)
        out = np.full(r.shape[0], np.nan)
        for tab in tables:
            mask = tab.covers(r, COVER_TOL) & np.isnan(out)
            if np.any(mask):
                out[mask] = tab(r[mask])
        return out

    def eps(self, rho) -> np.ndarray:
        out = self._lookup(self.eps_tables, rho)
        if np.any(np.isnan(out)):
            raise CoverageError("eps requested outside every conic region of the certificate")
        return out

    def alpha(self, rho) -> np.ndarray:
        out = self._lookup(self.alpha_tables, rho)
        if np.any(np.isnan(out)):
            raise CoverageError("alpha requested outside every nonconic region of the certificate")
        return out

    def classify(self, rho) -> np.ndarray:
        """True where rho lies in a conic region; CoverageError if in neither."""
        r = np.atleast_2d(rho)
        conic = np.zeros(r.shape[0], dtype=bool)
        for tab in self.eps_tables:
            conic |= tab.covers(r)
        non = np.zeros(r.shape[0], dtype=bool)
        for tab in self.alpha_tables:
            non |= tab.covers(r, tol=0.0)
        if np.any(~conic & ~non):
            raise CoverageError("trajectory visits parameter values outside the certificate")
        return conic

    def to_dict(self):
        return {
            "sector": self.sector.to_dict(),
            "grid": {"rho_points": self.grid.rho_points, "rate_points": self.grid.rate_points},
            "eps_tables": [t.to_dict() for t in self.eps_tables],
            "alpha_tables": [t.to_dict() for t in self.alpha_tables],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ConicSector(**d["sector"]),
            [IndexTable.from_dict(t) for t in d["eps_tables"]],
            [IndexTable.from_dict(t) for t in d["alpha_tables"]],
            GridSpec(**d.get("grid", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "ConicityCertificate":
        return cls.from_dict(json.loads(text))


def split_parameter_range(sys, sector, samples=41, tol=1e-6, feas_tol=sdp.FEAS_TOL, classifier=None):
    """Conic/nonconic sub-intervals of a scalar parameter range.

    Frozen classification on a uniform sample, refined by bisection at each
    label change. Returns a list of (lo, hi, is_conic).
    """
    if sys.p != 1:
        raise InputError("automatic splitting needs a scalar parameter; give regions explicitly")
    classify = classifier or (lambda r: is_conic_at(sys, sector, r, feas_tol))
    lo, hi = float(sys.lo[0]), float(sys.hi[0])
    xs = np.linspace(lo, hi, samples)
    labels = [classify(x) for x in xs]
    cuts = []
    for k in range(samples - 1):
        if labels[k] != labels[k + 1]:
            a, b = xs[k], xs[k + 1]
            while b - a > tol:
                mid = 0.5 * (a + b)
                if classify(mid) == labels[k]:
                    a = mid
                else:
                    b = mid
            cuts.append((0.5 * (a + b), labels[k + 1]))
    out = []
    start, lab = lo, labels[0]
    for c, nxt in cuts:
        out.append((start, c, lab))
        start, lab = c, nxt
    out.append((start, hi, lab))
    return out


def certify(sys, sector, regions, bounds=None, grid=GridSpec(), feas_tol=sdp.FEAS_TOL) -> ConicityCertificate:
    """Index tables for labelled regions [(lo, hi, is_conic), ...]."""
    cert = ConicityCertificate(sector, grid=grid)
    conic_faces = []
    for lo, hi, conic in regions:
        if conic:
            conic_faces += [np.atleast_1d(lo), np.atleast_1d(hi)]
    for lo, hi, conic in regions:
        box = (np.atleast_1d(lo), np.atleast_1d(hi))
        if conic:
            cert.eps_tables.append(conicity_index_eps(sys, sector, box, bounds, grid, feas_tol))
        else:
            faces = [f for f in conic_faces if np.any(np.abs(f - box[0]) < 1e-12) or np.any(np.abs(f - box[1]) < 1e-12)]
            cert.alpha_tables.append(nonconicity_index_alpha(sys, sector, box, bounds, grid, feas_tol, shared_faces=faces))
    return cert


@dataclass
class RegionPartition:
    intervals: list[tuple[float, float, bool]]  # (start, end, is_conic)

    @property
    def t_c(self) -> float:
        return sum(e - s for s, e, c in self.intervals if c)

    @property
    def t_nc(self) -> float:
        return sum(e - s for s, e, c in self.intervals if not c)

    @property
    def conic_intervals(self):
        return [(s, e) for s, e, c in self.intervals if c]

    @property
    def nonconic_intervals(self):
        return [(s, e) for s, e, c in self.intervals if not c]

    def to_rows(self):
        return [{"start": s, "end": e, "label": "conic" if c else "nonconic"} for s, e, c in self.intervals]


def _merge(pieces):
    out = []
    for s, e, c in pieces:
        if e - s <= 0:
            continue
        if out and out[-1][2] == c and abs(out[-1][1] - s) < 1e-15:
            out[-1] = (out[-1][0], e, c)
        else:
            out.append((s, e, c))
    return RegionPartition(out)


def partition_by(classify, traj: ParameterTrajectory, samples=200, time_tol=1e-6) -> RegionPartition:
    """Partition [t0, tn] by a pointwise classifier rho -> bool."""
    if traj.discrete:
        vals = traj.segment_values()
        bp = traj.breakpoints
        return _merge([(bp[i], bp[i + 1], bool(classify(vals[i]))) for i in range(vals.shape[0])])
    ts = np.linspace(traj.t0, traj.tn, samples)
    labels = [bool(classify(traj(t))) for t in ts]
    cuts = []
    for k in range(samples - 1):
        if labels[k] != labels[k + 1]:
            a, b = ts[k], ts[k + 1]
            while b - a > time_tol:
                mid = 0.5 * (a + b)
                if bool(classify(traj(mid))) == labels[k]:
                    a = mid
                else:
                    b = mid
            cuts.append(0.5 * (a + b))
    pieces = []
    start = traj.t0
    lab = labels[0]
    for c in cuts:
        pieces.append((start, c, lab))
        start, lab = c, not lab
    pieces.append((start, traj.tn, lab))
    return _merge(pieces)


def partition_trajectory(sys, sector, traj, bounds=None, grid=GridSpec(), samples=200, time_tol=1e-6, feas_tol=sdp.FEAS_TOL):
    """Conic/nonconic intervals from frozen-parameter sector feasibility."""
    cache = {}

    def classify(rho):
        key = tuple(np.round(np.atleast_1d(rho), 12))
        if key not in cache:
            cache[key] = is_conic_at(sys, sector, rho, feas_tol)
        return cache[key]

    return partition_by(classify, traj, samples, time_tol)


def certificate_partition(cert: ConicityCertificate, traj, samples=200, time_tol=1e-9) -> RegionPartition:
    return partition_by(lambda r: bool(cert.classify(r)[0]), traj, samples, time_tol)


@dataclass(frozen=True)
class ConicityVerdict:
    holds: bool
    margin: float


def average_conicity_discrete(c: Sequence[float], mu: Sequence[float]) -> ConicityVerdict:
    """Weighted index sum over segments; holds iff it is nonnegative."""
    c = np.asarray(c, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if c.shape != mu.shape:
        raise ShapeError("c and mu must have equal length")
    if np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise InputError("duration fractions must be positive and sum to one")
    margin = float(c @ mu)
    return ConicityVerdict(margin >= 0, margin)


def _ubar_sq(inputs: InputClass, conservative: bool) -> float:
    return (inputs.u_high if conservative else inputs.u_low) ** 2


def segment_indices(cert, traj, inputs: InputClass, conservative=False):
    """(c_i, mu_i) for a discrete trajectory, labelled by the certificate regions."""
    if not traj.discrete:
        raise InputError("segment indices need a discrete trajectory")
    vals = traj.segment_values()
    labels = cert.classify(vals)
    u2 = _ubar_sq(inputs, conservative)
    c = np.empty(vals.shape[0])
    if np.any(labels):
        c[labels] = cert.eps(vals[labels])
    if np.any(~labels):
        c[~labels] = -u2 * cert.alpha(vals[~labels])
    dur = np.diff(traj.breakpoints)
    mu = dur / dur.sum()
    # renormalise so the fractions sum to one to machine precision
    mu = mu / mu.sum()
    return c, mu


def discrete_margin(cert, traj, inputs, conservative=False) -> ConicityVerdict:
    c, mu = segment_indices(cert, traj, inputs, conservative)
    return average_conicity_discrete(c, mu)


def average_conicity_continuous(
    cert: ConicityCertificate,
    partition: RegionPartition,
    traj: ParameterTrajectory,
    inputs: InputClass,
    conservative: bool = False,
    samples: int = 1000,
) -> ConicityVerdict:
    """Integral of eps over conic time minus ubar^2 times integral of alpha over nonconic time."""
    total = 0.0
    u2 = _ubar_sq(inputs, conservative)
    for s, e, conic in partition.intervals:
        t = np.linspace(s, e, samples)
        rho = traj(t)
        if traj.discrete:
            # sample inside the interval to avoid the jump values at its ends
            rho = traj(np.clip(t, s, np.nextafter(e, s)))
        f = cert.eps(rho) if conic else -u2 * cert.alpha(rho)
        total += quadrature(t, f)
    return ConicityVerdict(total >= 0, float(total))


def riemann_convergence_check(cert, traj, mesh_sequence, inputs: InputClass | None = None, conservative=False, partition=None):
    """|Riemann sum of the tagged partition - continuous margin| per mesh.

    The discrete margin is rescaled by the horizon so both sides are
    integrals over [t0, tn].
    """
    from .lpv import discretize_trajectory

    inputs = inputs or InputClass(1.0, 1.0)
    partition = partition or certificate_partition(cert, traj)
    cont = average_conicity_continuous(cert, partition, traj, inputs, conservative).margin
    errs = []
    for h in mesh_sequence:
        d = discretize_trajectory(traj, h)
        disc = discrete_margin(cert, d, inputs, conservative).margin * traj.horizon
        errs.append(abs(disc - cont))
    return np.array(errs)
