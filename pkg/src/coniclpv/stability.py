"""Feedback sector conditions, loop supply blocks and the L2 gain estimate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConicSector, supply_rate_series, windowed_integral
from .errors import EstimateUndefinedError, InputError, PreconditionError, SingularConeError

EPS_BETA = 1e-9
BETA_FLOOR = 1e-6


@dataclass(frozen=True)
class SectorPair:
    plant: ConicSector
    controller: ConicSector

    def to_dict(self):
        return {"plant": self.plant.to_dict(), "controller": self.controller.to_dict()}


def complementary_cone(plant: ConicSector, delta: float = 0.0) -> ConicSector:
    """[-1/b_p + delta, -1/a_p - delta]."""
    if plant.a == 0 or plant.b == 0:
        raise SingularConeError("plant sector bound is zero")
    if delta < 0:
        raise InputError("delta must be nonnegative")
    a, b = -1.0 / plant.b + delta, -1.0 / plant.a - delta
    if not a < b:
        raise SingularConeError(f"complementary cone [{a}, {b}] is empty or inverted (delta too large?)")
    return ConicSector(a, b)


@dataclass(frozen=True)
class SectorConditions:
    condition1: float
    condition2: float

    @property
    def stable(self) -> bool:
        return self.condition1 > 0 and self.condition2 > 0


def check_sector_conditions(pair: SectorPair) -> SectorConditions:
    ap, bp = pair.plant.a, pair.plant.b
    ac, bc = pair.controller.a, pair.controller.b
    if bc == 0 or bp == 0:
        raise SingularConeError("upper sector bound is zero")
    c1 = 1.0 / bc + ap
    c2 = (1.0 / bc + ap) * (1.0 / bp + ac) - 0.25 * (ac / bc - ap / bp) ** 2
    return SectorConditions(c1, c2)


@dataclass(frozen=True)
class QsrBlocks:
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray

    @property
    def m(self) -> int:
        return self.Q.shape[0] // 2

    def kernel(self) -> np.ndarray:
        return np.block([[self.Q, self.S], [self.S.T, self.R]])

    def as_tuple(self):
        return self.Q, self.S, self.R


def qsr_matrices(pair: SectorPair, m: int = 1) -> QsrBlocks:
    """Loop supply on Y = (y_c, y_p) and exogenous U = (u_c, u_p).

    Obtained by substituting e_c = u_c + y_p, e_p = u_p - y_c into the sum of
    the two sector supplies, so that w(Y, U) = w_c(e_c, y_c) + w_p(e_p, y_p).
    """
    ap, bp = pair.plant.a, pair.plant.b
    ac, bc = pair.controller.a, pair.controller.b
    if bc == 0 or bp == 0:
        raise SingularConeError("upper sector bound is zero")
    I = np.eye(m)
    q12 = 0.5 * (ac / bc - ap / bp)
    Q = np.block([[(-1.0 / bc - ap) * I, q12 * I], [q12 * I, (-1.0 / bp - ac) * I]])
    S = np.block([[0.5 * (1 + ac / bc) * I, ap * I], [-ac * I, 0.5 * (1 + ap / bp) * I]])
    R = np.block([[-ac * I, 0 * I], [0 * I, -ap * I]])
    return QsrBlocks(Q, S, R)


@dataclass(frozen=True)
class GainEstimate:
    beta: float
    zeta: float
    lambda_r: float
    gamma_formula: float  # (beta + lambda(R)) / zeta, read literally
    gamma: float  # bound implied by the loop supply inequality
    degenerate: bool = False

    def to_dict(self):
        return dict(
            beta=self.beta,
            zeta=self.zeta,
            lambda_r=self.lambda_r,
            gamma_formula=self.gamma_formula,
            gamma=self.gamma,
            degenerate=self.degenerate,
        )


def l2_gain_estimate(pair: SectorPair, m: int = 1) -> GainEstimate:
    """Closed-loop gain bound from the loop supply.

    `gamma_formula` is the literal (beta + lambda(R))/zeta. `gamma` solves
    q g^2 - 2 s g - r <= 0 for g = |Y|/|U|, with q = lambda_min(-Q),
    s = |S|_2 and r = lambda_max(R); this is what the nonnegative integral
    of the loop supply actually implies and is the one to compare with
    simulated gains.
    """
    blocks = qsr_matrices(pair, m)
    Q, S, R = blocks.as_tuple()
    qmax = float(np.linalg.eigvalsh(Q)[-1])
    if qmax >= 0:
        raise PreconditionError("Q is not negative definite; the sector conditions fail")
    ac, ap = pair.controller.a, pair.plant.a
    beta = max(ac, ap) + EPS_BETA
    degenerate = beta < BETA_FLOOR
    beta = max(beta, BETA_FLOOR)
    zeta = float(np.linalg.eigvalsh(Q + np.eye(2 * m) / beta)[-1])
    if zeta <= 0:
        raise EstimateUndefinedError(f"zeta = {zeta:.3e} is not positive")
    lam_r = max(-ac, -ap)
    q = -qmax
    s = float(np.linalg.norm(S, 2))
    r = float(np.linalg.eigvalsh(R)[-1])
    gamma = (s + np.sqrt(max(s * s + q * r, 0.0))) / q
    return GainEstimate(beta, zeta, lam_r, (beta + lam_r) / zeta, float(gamma), degenerate)


def loop_supply_series(blocks: QsrBlocks, Y, U) -> np.ndarray:
    Y = np.atleast_2d(Y)
    U = np.atleast_2d(U)
    return (
        np.einsum("ki,ij,kj->k", Y, blocks.Q, Y)
        + 2 * np.einsum("ki,ij,kj->k", Y, blocks.S, U)
        + np.einsum("ki,ij,kj->k", U, blocks.R, U)
    )


def verify_feedback_iqc(pair: SectorPair, trace, t1=None, t2=None) -> float:
    """Integral of the loop supply along a LoopTrace (relations re-checked)."""
    trace.check_relations()
    m = trace.u_c.shape[1]
    blocks = qsr_matrices(pair, m)
    w = loop_supply_series(blocks, trace.y, trace.u)
    t1 = trace.t[0] if t1 is None else t1
    t2 = trace.t[-1] if t2 is None else t2
    return windowed_integral(trace.t, w, t1, t2)


def split_supplies(pair: SectorPair, trace):
    """(w_c, w_p) sample series of the two subsystem supplies."""
    return (
        supply_rate_series(pair.controller, trace.e_c, trace.y_c),
        supply_rate_series(pair.plant, trace.e_p, trace.y_p),
    )
