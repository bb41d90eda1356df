"""Closed-loop assembly, conic controller realization and nominal-cone design."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import conic, sdp
from .conic import ConicityCertificate, ConicSector, certificate_partition
from .errors import (
    ConicLpvError,
    DesignInfeasibleError,
    InputError,
    NoFiniteIndexError,
    NotConicError,
    RegionMisclassifiedError,
    SectorMismatchError,
    ShapeError,
    WellPosednessError,
)
from .lpv import AffineLpv, InputClass, LpvSystem, ParameterBounds, ParameterTrajectory
from .sdp import GridSpec
from .stability import (
    QsrBlocks,
    SectorPair,
    check_sector_conditions,
    complementary_cone,
    l2_gain_estimate,
    qsr_matrices,
)

log = logging.getLogger(__name__)

COND_MAX = 1e6
POLE_RATE = 10.0
# realized controllers sit strictly inside their sector by this radius fraction
REALIZE_SHRINK = 0.1
# search range multiple of the frozen-node cone when no full-range cone exists
ANCHOR_SPAN = 10.0
COARSE_POINTS = 12


class ClosedLoopSystem(LpvSystem):
    """Negative feedback of an LPV plant with an LTI controller.

    State (x_p, x_c), exogenous input U = (u_c, u_p), output Y = (y_c, y_p),
    with e_c = u_c + y_p and e_p = u_p - y_c eliminated.
    """

    def __init__(self, plant: LpvSystem, controller: LpvSystem, grid: GridSpec = GridSpec()):
        if controller.m != plant.m:
            raise ShapeError("controller and plant channel counts differ")
        self.plant = plant
        self.controller = controller
        self.Ac, self.Bc, self.Cc, self.Dc = controller.evaluate(np.zeros(controller.p) + controller.lo)
        self.p = plant.p
        self.lo = plant.lo
        self.hi = plant.hi
        self.n = plant.n + controller.n
        self.m = 2 * plant.m
        nodes, _ = grid.rho_nodes(plant.lo, plant.hi)
        _, _, _, Dp = plant.evaluate_many(nodes)
        for rho, D in zip(nodes, Dp):
            L = np.eye(plant.m) + self.Dc @ D
            if not np.isfinite(np.linalg.cond(L)) or np.linalg.cond(L) > COND_MAX:
                raise WellPosednessError(f"I + Dc Dp is ill-conditioned at rho={rho}")

    def signal_maps_many(self, rhos):
        """Per-sample linear maps z = (x_p, x_c, u_c, u_p) -> each loop signal."""
        Ap, Bp, Cp, Dp = self.plant.evaluate_many(rhos)
        k = Ap.shape[0]
        npl, nc, m = self.plant.n, self.controller.n, self.plant.m
        Ac, Bc, Cc, Dc = self.Ac, self.Bc, self.Cc, self.Dc
        width = npl + nc + 2 * m
        L = np.eye(m)[None] + np.einsum("ij,kjl->kil", Dc, Dp)
        if np.any(np.linalg.cond(L) > COND_MAX):
            raise WellPosednessError("I + Dc Dp is ill-conditioned along the trajectory")
        W = np.linalg.inv(L)
        pre = np.zeros((k, m, width))
        pre[:, :, :npl] = np.einsum("ij,kjl->kil", Dc, Cp)
        pre[:, :, npl : npl + nc] = Cc
        pre[:, :, npl + nc : npl + nc + m] = Dc
        pre[:, :, npl + nc + m :] = np.einsum("ij,kjl->kil", Dc, Dp)
        y_c = np.einsum("kij,kjl->kil", W, pre)
        y_p = -np.einsum("kij,kjl->kil", Dp, y_c)
        y_p[:, :, :npl] += Cp
        y_p[:, :, npl + nc + m :] += Dp
        e_c = y_p.copy()
        e_c[:, :, npl + nc : npl + nc + m] += np.eye(m)
        e_p = -y_c
        e_p[:, :, npl + nc + m :] += np.eye(m)
        xdot = np.zeros((k, npl + nc, width))
        xdot[:, :npl, :npl] = Ap
        xdot[:, :npl] += np.einsum("kij,kjl->kil", Bp, e_p)
        xdot[:, npl:, npl : npl + nc] = Ac
        xdot[:, npl:] += np.einsum("ij,kjl->kil", Bc, e_c)
        return {"xdot": xdot, "y_c": y_c, "y_p": y_p, "e_c": e_c, "e_p": e_p}

    def _evaluate_many(self, rhos):
        maps = self.signal_maps_many(rhos)
        nx = self.n
        Y = np.concatenate([maps["y_c"], maps["y_p"]], axis=1)
        return maps["xdot"][:, :, :nx], maps["xdot"][:, :, nx:], Y[:, :, :nx], Y[:, :, nx:]


def assemble_closed_loop(plant: LpvSystem, controller: LpvSystem, grid: GridSpec = GridSpec()) -> ClosedLoopSystem:
    return ClosedLoopSystem(plant, controller, grid)


def realize_conic_controller(sector: ConicSector, m: int = 1, pole_rate: float = POLE_RATE, shrink: float = 0.0) -> AffineLpv:
    """y = c u + r' G u with G a unit-gain first-order low-pass.

    r' = (1 - shrink) r. The Nyquist locus is the circle through c and
    c + r', inside the sector disk (touching it at DC when shrink = 0).
    """
    if pole_rate <= 0:
        raise InputError("pole_rate must be positive")
    if not 0 <= shrink < 1:
        raise InputError("shrink must lie in [0, 1)")
    I = np.eye(m)
    r = sector.radius * (1.0 - shrink)
    return AffineLpv.lti(-pole_rate * I, pole_rate * I, r * I, sector.center * I)


def closed_loop_indices(
    cl: ClosedLoopSystem,
    qsr: QsrBlocks,
    regions,
    bounds: ParameterBounds | None = None,
    grid: GridSpec = GridSpec(),
    feas_tol: float = sdp.FEAS_TOL,
) -> ConicityCertificate:
    """eps_cl tables on conic plant regions, alpha_cl tables on nonconic ones."""
    bounds = bounds or ParameterBounds.for_system(cl.plant)
    blocks = qsr.as_tuple()
    cert = ConicityCertificate(None, grid=grid)
    for lo, hi, is_conic in regions:
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        nodes, axes = grid.rho_nodes(lo, hi)
        vals, storage, res = [], [], []
        for rho in nodes:
            try:
                if is_conic:
                    node = conic.eps_at(cl, None, rho, bounds, feas_tol, qsr=blocks)
                else:
                    node = conic.alpha_at(cl, None, rho, bounds, feas_tol, qsr=blocks, allow_zero=True)
            except (RegionMisclassifiedError, NoFiniteIndexError) as exc:
                raise SectorMismatchError(f"closed-loop index LMI infeasible at rho={rho}: {exc}") from exc
            vals.append(node.value)
            storage.append(node.storage)
            res.append(node.max_residual)
        tab = conic.IndexTable("eps" if is_conic else "alpha", lo, hi, axes, np.array(vals), storage, res)
        (cert.eps_tables if is_conic else cert.alpha_tables).append(tab)
    return cert


def _integrals(cert: ConicityCertificate, traj: ParameterTrajectory, samples=1000):
    part = certificate_partition(cert, traj)
    ie = ia = 0.0
    for s, e, is_conic in part.intervals:
        t = np.linspace(s, e, samples)
        rho = traj(np.clip(t, s, np.nextafter(e, s))) if traj.discrete else traj(t)
        if is_conic:
            ie += float(np.trapezoid(cert.eps(rho), t))
        else:
            ia += float(np.trapezoid(cert.alpha(rho), t))
    return ie, ia, part


@dataclass
class Candidate:
    radius: float
    plant_sector: ConicSector
    controller_sector: ConicSector | None
    int_eps: float
    int_alpha: float
    residual: float  # min over the trajectory class
    regions: list = field(default_factory=list)
    note: str = ""

    @property
    def ok(self) -> bool:
        return np.isfinite(self.residual)


def evaluate_candidate(
    plant: LpvSystem,
    center: float,
    radius: float,
    trajs: Sequence[ParameterTrajectory],
    inputs: InputClass,
    bounds: ParameterBounds | None = None,
    grid: GridSpec = GridSpec(),
    delta: float = 0.05,
    pole_rate: float = POLE_RATE,
    reinsert_ubar: bool = False,
    conservative: bool = False,
    feas_tol: float = sdp.FEAS_TOL,
) -> Candidate:
    """Residual int eps_cl - w int alpha_cl for one nominal plant cone.

    w = 1 reproduces the equality verbatim; `reinsert_ubar` uses the lower
    input bound squared (upper with `conservative`).
    """
    sp = ConicSector.from_center_radius(center, radius)
    try:
        sc = complementary_cone(sp, delta)
    except ConicLpvError as exc:
        return Candidate(radius, sp, None, math.nan, math.nan, -math.inf, note=str(exc))
    pair = SectorPair(sp, sc)
    cond = check_sector_conditions(pair)
    if not cond.stable:
        return Candidate(radius, sp, sc, math.nan, math.nan, -math.inf, note="sector conditions fail")
    qsr = qsr_matrices(pair, plant.m)
    controller = realize_conic_controller(sc, plant.m, pole_rate, REALIZE_SHRINK)
    try:
        cl = assemble_closed_loop(plant, controller, grid)
        if plant.p == 1 and plant.hi[0] > plant.lo[0]:
            regions = conic.split_parameter_range(plant, sp, feas_tol=feas_tol)
        else:
            regions = [(plant.lo, plant.hi, conic.is_conic_at(plant, sp, plant.lo, feas_tol))]
        cert = closed_loop_indices(cl, qsr, regions, bounds, grid, feas_tol)
    except ConicLpvError as exc:
        return Candidate(radius, sp, sc, math.nan, math.nan, -math.inf, note=str(exc))
    weight = 1.0
    if reinsert_ubar:
        weight = (inputs.u_high if conservative else inputs.u_low) ** 2
    worst = None
    for traj in trajs:
        ie, ia, _ = _integrals(cert, traj)
        resid = ie - weight * ia
        if worst is None or resid < worst[2]:
            worst = (ie, ia, resid)
    return Candidate(radius, sp, sc, worst[0], worst[1], worst[2], regions)


@dataclass
class DesignResult:
    plant_sector: ConicSector
    controller_sector: ConicSector
    int_eps: float
    int_alpha: float
    residual: float
    horizon: float
    gain: object
    baseline_sector: ConicSector | None
    trace: list[tuple[float, float]]
    equality_met: bool
    method: str

    @property
    def radius(self) -> float:
        return self.plant_sector.radius

    @property
    def baseline_radius(self) -> float | None:
        return None if self.baseline_sector is None else self.baseline_sector.radius

    def to_dict(self):
        return {
            "plant_sector": self.plant_sector.to_dict(),
            "controller_sector": self.controller_sector.to_dict(),
            "radius": self.radius,
            "baseline_sector": None if self.baseline_sector is None else self.baseline_sector.to_dict(),
            "baseline_radius": self.baseline_radius,
            "int_eps_cl": self.int_eps,
            "int_alpha_cl": self.int_alpha,
            "residual": self.residual,
            "horizon": self.horizon,
            "equality_met": self.equality_met,
            "method": self.method,
            "gain": self.gain.to_dict() if self.gain is not None else None,
            "trace": [{"radius": r, "residual": v} for r, v in self.trace],
        }


def _result(best: Candidate, baseline, horizon, tol, trace, method):
    pair = SectorPair(best.plant_sector, best.controller_sector)
    try:
        gain = l2_gain_estimate(pair, 1)
    except ConicLpvError:
        gain = None
    eq = 0 <= best.residual <= tol * horizon
    return DesignResult(
        best.plant_sector, best.controller_sector, best.int_eps, best.int_alpha, best.residual,
        horizon, gain, baseline, trace, eq, method,
    )


def design_nominal_cone(
    plant: LpvSystem,
    trajs: Sequence[ParameterTrajectory],
    inputs: InputClass,
    bounds: ParameterBounds | None = None,
    grid: GridSpec = GridSpec(),
    delta: float = 0.05,
    tol: float = 1e-3,
    pole_rate: float = POLE_RATE,
    reinsert_ubar: bool = False,
    conservative: bool = False,
    max_iter: int = 40,
    sweep_points: int = 50,
    feas_tol: float = sdp.FEAS_TOL,
) -> DesignResult:
    """Smallest nominal radius whose closed loop balances eps_cl against alpha_cl.

    Bisection on r at the tight full-range center, between the smallest
    radius whose cone still straddles zero and the full-range radius (the
    worst-case baseline). Falls back to a 5-center grid when the baseline
    itself fails, and to a dense sweep when the residual is not monotone.
    """
    if not trajs:
        raise InputError("empty trajectory class")
    horizon = min(t.horizon for t in trajs)
    try:
        base, _ = conic.find_conic_bounds(plant, bounds=bounds, grid=grid, feas_tol=feas_tol)
        anchor = base
    except NotConicError:
        # no worst-case cone exists; anchor on the frozen cones of the conic nodes
        base = None
        anchor = _frozen_anchor(plant, grid, feas_tol)

    def ev(c, r):
        cand = evaluate_candidate(
            plant, c, r, trajs, inputs, bounds, grid, delta, pole_rate, reinsert_ubar, conservative, feas_tol
        )
        log.info("r=%.6g residual=%.6g %s", r, cand.residual, cand.note)
        return cand

    r_full = anchor.radius if base is not None else ANCHOR_SPAN * anchor.radius
    centers = [anchor.center] + [anchor.center + k * 0.1 * anchor.radius for k in (-2, -1, 1, 2)]
    trace: list[tuple[float, float]] = []
    best_resid = -math.inf
    for c in centers:
        r_min = abs(c) * (1 + 1e-3) + 1e-6
        r_max = max(r_full, r_min * (1 + 1e-3))
        local: list[tuple[float, float]] = []

        def step(r):
            cand = ev(c, r)
            local.append((r, cand.residual))
            return cand

        hi = step(r_max)
        r_lo = r_min
        if not hi.residual >= 0:
            # the top of the range can fail outright (empty controller cone,
            # unstable closed loop); look for any admissible radius below it
            coarse = [step(r) for r in np.linspace(r_min, r_max, COARSE_POINTS)[:-1]]
            ok = [k for k, cand in enumerate(coarse) if cand.residual >= 0]
            best_resid = max([best_resid, hi.residual] + [cand.residual for cand in coarse])
            if not ok:
                trace += local
                continue
            hi = coarse[ok[0]]
            r_lo = coarse[ok[0] - 1].radius if ok[0] > 0 else r_min
        best_resid = max(best_resid, hi.residual)
        lo = step(r_lo)
        if lo.residual >= 0:
            trace += local
            return _result(lo, base, horizon, tol, trace, "bisection")
        r_hi = hi.radius
        for _ in range(max_iter):
            if 0 <= hi.residual <= tol * horizon or r_hi - r_lo <= 1e-9 * max(1.0, r_full):
                break
            mid = step(0.5 * (r_lo + r_hi))
            if mid.residual >= 0:
                hi, r_hi = mid, mid.radius
            else:
                r_lo = mid.radius
        trace += local
        if _monotone(local):
            return _result(hi, base, horizon, tol, trace, "bisection")
        log.warning("residual not monotone in the radius; using a dense sweep")
        sweep = [ev(c, r) for r in np.linspace(r_min, r_max, sweep_points)]
        trace += [(cand.radius, cand.residual) for cand in sweep]
        ok = [cand for cand in sweep if cand.residual >= 0]
        if ok:
            return _result(ok[0], base, horizon, tol, trace, "sweep")
    raise DesignInfeasibleError("no nominal cone gives a nonnegative residual", best_resid)


def _frozen_anchor(plant, grid, feas_tol):
    nodes, _ = GridSpec(max(grid.rho_points, 11), 1).rho_nodes(plant.lo, plant.hi)
    found = []
    for rho in nodes:
        try:
            sec, _ = conic.find_conic_bounds(plant, region=(rho, rho), grid=GridSpec(1, 1), feas_tol=feas_tol)
        except NotConicError:
            continue
        found.append(sec)
    if not found:
        raise NotConicError("no parameter node admits a conic sector")
    return ConicSector(min(f.a for f in found), max(f.b for f in found))


def _monotone(trace) -> bool:
    pts = sorted((r, v) for r, v in trace if np.isfinite(v))
    vals = [v for _, v in pts]
    return all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
