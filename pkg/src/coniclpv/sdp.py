"""Affine matrix expressions, LMI problems and the semidefinite backend.

Constraints are stored as affine symmetric maps F(x) = F0 + sum_i x_i F_i
that must be negative semidefinite. Every solution is re-checked against
these maps with a dense eigenvalue computation before it is reported as
feasible, independently of what the backend claims.
"""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InputError, ShapeError
from .lpv import ParameterBounds
from .numerics import is_negative_semidefinite, max_eigenvalue

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
EPS_P = 1e-6
VAR_BOUND = 1e4


class Affine:
    """Matrix-valued affine function of the scalar decision variables."""

    __array_ufunc__ = None  # make numpy defer `ndarray @ Affine` to us

    def __init__(self, const, terms=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms: dict[int, np.ndarray] = terms or {}

    @property
    def shape(self):
        return self.const.shape

    @classmethod
    def wrap(cls, other, shape=None) -> "Affine":
        if isinstance(other, Affine):
            return other
        arr = np.asarray(other, dtype=float)
        if arr.ndim == 0 and shape is not None:
            arr = np.full(shape, float(arr))
        return cls(arr)

    def _combine(self, other, sign):
        other = Affine.wrap(other, self.shape)
        if other.shape != self.shape:
            raise ShapeError(f"shape mismatch {self.shape} vs {other.shape}")
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + sign * v if k in terms else sign * v
        return Affine(self.const + sign * other.const, terms)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return Affine(-self.const, {k: -v for k, v in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, Affine):
            if other.shape == (1, 1) and not other.terms:
                other = float(other.const[0, 0])
            elif self.shape == (1, 1) and not self.terms:
                return other * float(self.const[0, 0])
            else:
                raise TypeError("product of two decision-dependent expressions is not affine")
        arr = np.asarray(other, dtype=float)
        if arr.ndim == 0:
            s = float(arr)
            return Affine(self.const * s, {k: v * s for k, v in self.terms.items()})
        if self.shape != (1, 1):
            raise ShapeError("only scalar expressions can scale a matrix")
        arr = np.atleast_2d(arr)
        return Affine(self.const[0, 0] * arr, {k: v[0, 0] * arr for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Affine):
            if other.terms and self.terms:
                raise TypeError("product of two decision-dependent expressions is not affine")
            if not other.terms:
                return self @ other.const
            return other.__rmatmul__(self.const)
        M = np.atleast_2d(np.asarray(other, dtype=float))
        return Affine(self.const @ M, {k: v @ M for k, v in self.terms.items()})

    def __rmatmul__(self, other):
        M = np.atleast_2d(np.asarray(other, dtype=float))
        return Affine(M @ self.const, {k: M @ v for k, v in self.terms.items()})

    @property
    def T(self):
        return Affine(self.const.T, {k: v.T for k, v in self.terms.items()})

    def sym(self):
        """self + self'."""
        return self + self.T

    def value(self, x) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.terms.items():
            out += x[k] * v
        return out

    def is_symmetric(self, tol=1e-12) -> bool:
        mats = [self.const, *self.terms.values()]
        return all(np.max(np.abs(M - M.T), initial=0.0) <= tol * max(1.0, np.max(np.abs(M), initial=0.0)) for M in mats)


def bmat(blocks: Sequence[Sequence]) -> Affine:
    """Assemble a block matrix from Affine, ndarray or None (zero) entries."""
    rows = len(blocks)
    cols = len(blocks[0])
    heights = [None] * rows
    widths = [None] * cols
    for i, j in itertools.product(range(rows), range(cols)):
        b = blocks[i][j]
        if b is None:
            continue
        shp = Affine.wrap(b).shape
        heights[i] = heights[i] or shp[0]
        widths[j] = widths[j] or shp[1]
    if None in heights or None in widths:
        raise ShapeError("every block row and column needs at least one sized block")
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((roff[-1], coff[-1]))
    terms: dict[int, np.ndarray] = {}
    for i, j in itertools.product(range(rows), range(cols)):
        b = blocks[i][j]
        if b is None:
            continue
        b = Affine.wrap(b)
        if b.shape != (heights[i], widths[j]):
            raise ShapeError(f"block ({i},{j}) has shape {b.shape}")
        sl = (slice(roff[i], roff[i + 1]), slice(coff[j], coff[j + 1]))
        const[sl] = b.const
        for k, v in b.terms.items():
            if k not in terms:
                terms[k] = np.zeros_like(const)
            terms[k][sl] = v
    return Affine(const, terms)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class Variable:
    name: str
    indices: list[int]
    shape: tuple
    symmetric: bool


class SdpProblem:
    """Decision variables, NSD constraints and an optional linear objective."""

    def __init__(self):
        self.nvar = 0
        self.variables: dict[str, Variable] = {}
        self.constraints: list[tuple[str, Affine]] = []
        self.objective: Affine | None = None

    def _new(self, count):
        idx = list(range(self.nvar, self.nvar + count))
        self.nvar += count
        return idx

    def scalar(self, name: str) -> Affine:
        (k,) = self._new(1)
        self.variables[name] = Variable(name, [k], (1, 1), False)
        return Affine(np.zeros((1, 1)), {k: np.ones((1, 1))})

    def symmetric(self, name: str, n: int) -> Affine:
        pairs = [(i, j) for i in range(n) for j in range(i, n)]
        idx = self._new(len(pairs))
        terms = {}
        for k, (i, j) in zip(idx, pairs):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            terms[k] = E
        self.variables[name] = Variable(name, idx, (n, n), True)
        return Affine(np.zeros((n, n)), terms)

    def add_nsd(self, expr: Affine, name: str = "") -> None:
        """Require expr <= 0 (negative semidefinite)."""
        expr = Affine.wrap(expr)
        if expr.shape[0] != expr.shape[1]:
            raise ShapeError("constraint matrix must be square")
        if not expr.is_symmetric():
            raise ShapeError(f"constraint {name!r} is not symmetric")
        expr = Affine(0.5 * (expr.const + expr.const.T), {k: 0.5 * (v + v.T) for k, v in expr.terms.items()})
        self.constraints.append((name or f"c{len(self.constraints)}", expr))

    def add_psd(self, expr: Affine, name: str = "") -> None:
        self.add_nsd(-Affine.wrap(expr), name)

    def minimize(self, expr: Affine) -> None:
        expr = Affine.wrap(expr)
        if expr.shape != (1, 1):
            raise ShapeError("objective must be scalar")
        self.objective = expr

    def value_of(self, name: str, x) -> np.ndarray | float:
        var = self.variables[name]
        if not var.symmetric:
            return float(x[var.indices[0]])
        n = var.shape[0]
        M = np.zeros((n, n))
        for k, (i, j) in zip(var.indices, ((i, j) for i in range(n) for j in range(i, n))):
            M[i, j] = M[j, i] = x[k]
        return M

    def residuals(self, x) -> np.ndarray:
        """Max eigenvalue of every constraint at x (<= 0 means satisfied)."""
        return np.array([max_eigenvalue(c.value(x)) for _, c in self.constraints])


@dataclass
class SdpSolution:
    status: Status
    x: np.ndarray | None
    residuals: np.ndarray
    objective: float | None = None
    margin: float | None = None
    values: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals, initial=-np.inf))


class _Audit:
    """Session-wide record of every feasible solution's offline re-check."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.feasible = 0
        self.worst_ratio = -np.inf
        self.failures: list[str] = []

    def record(self, problem: SdpProblem, sol: SdpSolution, feas_tol: float):
        self.feasible += 1
        # rebuild every constraint at the returned point rather than trusting sol.residuals
        for name, c in problem.constraints:
            if not is_negative_semidefinite(c.value(sol.x), 10 * feas_tol):
                self.failures.append(f"{name}: not NSD within 10*{feas_tol:.1e}")
        self.worst_ratio = max(self.worst_ratio, sol.max_residual / feas_tol)


AUDIT = _Audit()


def _cvxopt_solve(problem: SdpProblem, margin: bool, bound: float):
    from cvxopt import matrix, solvers

    nx = problem.nvar + (1 if margin else 0)
    c = np.zeros(nx)
    if margin:
        c[-1] = -1.0
    elif problem.objective is not None:
        for k, v in problem.objective.terms.items():
            c[k] = v[0, 0]

    # box on the decision variables keeps the IPM iterates bounded
    rows_G, rows_h = [], []
    eye = np.eye(problem.nvar)
    rows_G += [eye, -eye]
    rows_h += [np.full(problem.nvar, bound)] * 2
    if margin:
        rows_G = [np.hstack([g, np.zeros((problem.nvar, 1))]) for g in rows_G]
        cap = np.zeros((1, nx))
        cap[0, -1] = 1.0
        rows_G.append(cap)
        rows_h.append(np.ones(1))
    Gl = np.vstack(rows_G) if rows_G else np.zeros((0, nx))
    hl = np.concatenate(rows_h) if rows_h else np.zeros(0)

    Gs, hs = [], []
    for _, F in problem.constraints:
        k = F.shape[0]
        G = np.zeros((k * k, nx))
        for j, v in F.terms.items():
            G[:, j] = v.reshape(-1, order="F")
        if margin:
            G[:, -1] = np.eye(k).reshape(-1, order="F")
        Gs.append(matrix(G))
        hs.append(matrix(-F.const))
    opts = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-10, "maxiters": 100}
    try:
        res = solvers.sdp(matrix(c), Gl=matrix(Gl), hl=matrix(hl), Gs=Gs, hs=hs, options=opts)
    except (ValueError, ArithmeticError) as exc:
        log.debug("cvxopt failure: %s", exc)
        return "error", None
    if res["x"] is None:
        return res["status"], None
    return res["status"], np.array(res["x"]).reshape(-1)


def solve(problem: SdpProblem, feas_tol: float = FEAS_TOL, bound: float = VAR_BOUND) -> SdpSolution:
    """Solve with cvxopt, then classify by independent residual checks.

    Feasibility problems (no objective) maximise a common margin t with
    F_j(x) + t I <= 0 and t <= 1, so that the returned decision sits as deep
    inside the feasible set as the cap allows. Problems with an objective are
    solved directly.
    """
    if not problem.constraints:
        raise InputError("problem has no constraints")
    margin = problem.objective is None
    status, x_full = _cvxopt_solve(problem, margin, bound)
    if x_full is None:
        st = Status.INFEASIBLE if status == "primal infeasible" else Status.NUMERICAL_FAILURE
        return SdpSolution(st, None, np.full(len(problem.constraints), np.inf))
    x = x_full[: problem.nvar]
    t = float(x_full[-1]) if margin else None
    res = problem.residuals(x)
    worst = float(np.max(res))
    obj = float(problem.objective.value(x)[0, 0]) if problem.objective is not None else None
    if worst <= feas_tol and status in ("optimal", "unknown"):
        st = Status.FEASIBLE if margin else Status.OPTIMAL
        if status == "unknown" and not margin:
            st = Status.FEASIBLE
    elif status == "primal infeasible" or (margin and status == "optimal" and t is not None and t < 0):
        st = Status.INFEASIBLE
    else:
        st = Status.NUMERICAL_FAILURE
    sol = SdpSolution(st, x, res, obj, t)
    if sol.feasible:
        sol.values = {name: problem.value_of(name, x) for name in problem.variables}
        AUDIT.record(problem, sol, feas_tol)
    return sol


def is_feasible(problem: SdpProblem, feas_tol: float = FEAS_TOL) -> tuple[bool, SdpSolution]:
    sol = solve(problem, feas_tol)
    return sol.feasible, sol


@dataclass(frozen=True)
class GridSpec:
    rho_points: int = 5
    rate_points: int = 3

    def __post_init__(self):
        if self.rho_points < 1 or self.rate_points < 1:
            raise InputError("grid needs at least one point per axis")

    def rho_nodes(self, lo, hi) -> np.ndarray:
        """Tensor grid over the box; vertices are always included."""
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        axes = []
        for a, b in zip(lo, hi):
            if b - a <= 1e-12:
                axes.append(np.array([a]))
            else:
                axes.append(np.linspace(a, b, max(2, self.rho_points)))
        return np.array(list(itertools.product(*axes)), dtype=float), axes

    def rate_nodes(self, bounds: ParameterBounds) -> np.ndarray:
        axes = []
        for lo, hi in zip(bounds.rate_min, bounds.rate_max):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                if np.isfinite(lo) or np.isfinite(hi):
                    raise InputError("half-infinite rate bounds are not supported")
                axes.append(np.array([0.0]))
            elif hi - lo <= 0:
                axes.append(np.array([lo]))
            else:
                axes.append(np.linspace(lo, hi, max(2, self.rate_points)))
        return np.array(list(itertools.product(*axes)), dtype=float)

    @classmethod
    def parse(cls, spec: str) -> "GridSpec":
        """Parse 'rho=5,rate=3'."""
        kw = {}
        for part in spec.split(","):
            key, _, val = part.partition("=")
            key = key.strip()
            if key not in ("rho", "rate"):
                raise InputError(f"unknown grid key {key!r}")
            kw[f"{key}_points"] = int(val)
        return cls(**kw)


class StorageBasis:
    """Affine storage P(rho) = P0 + sum_i rho_i P_i with symmetric blocks."""

    def __init__(self, problem: SdpProblem, name: str, n: int, p: int, constant: bool):
        self.name = name
        self.n = n
        self.p = p
        self.constant = constant
        self.blocks = [problem.symmetric(f"{name}0", n)]
        if not constant:
            self.blocks += [problem.symmetric(f"{name}{i + 1}", n) for i in range(p)]

    def at(self, rho) -> Affine:
        out = self.blocks[0]
        if not self.constant:
            for r, Pi in zip(np.atleast_1d(rho), self.blocks[1:]):
                out = out + Pi * float(r)
        return out

    def rate_term(self, rhodot) -> Affine | None:
        """sum_i rhodot_i dP/drho_i, or None for a constant basis."""
        if self.constant:
            return None
        out = None
        for r, Pi in zip(np.atleast_1d(rhodot), self.blocks[1:]):
            if r != 0:
                out = Pi * float(r) if out is None else out + Pi * float(r)
        return out

    def values(self, sol: SdpSolution) -> list[np.ndarray]:
        return [sol.values[f"{self.name}{i}"] for i in range(len(self.blocks))]

    @staticmethod
    def evaluate(blocks: Sequence[np.ndarray], rho) -> np.ndarray:
        out = np.array(blocks[0], dtype=float)
        for r, Pi in zip(np.atleast_1d(rho), blocks[1:]):
            out = out + r * np.asarray(Pi)
        return out


Builder = Callable[[np.ndarray, np.ndarray, Affine, "Affine | None"], Iterable[Affine]]


def assemble_gridded_lmi(
    builder: Builder,
    bounds: ParameterBounds,
    grid: GridSpec,
    n: int,
    region=None,
    problem: SdpProblem | None = None,
    storage_name: str = "P",
    constant_storage: bool | None = None,
    eps_p: float = EPS_P,
    storage_psd_only: bool = False,
):
    """One LMI per (rho, rho-dot) node sharing an affine storage basis.

    `builder(rho, rhodot, P, Pdot)` yields the constraint matrices (<= 0) at a
    node. P(rho) - eps_p I >= 0 is added at every rho-node (plain P >= 0 when
    `storage_psd_only`). Rate-unbounded bounds force a constant storage.
    Returns (problem, storage basis, rho nodes).
    """
    problem = problem or SdpProblem()
    lo, hi = (bounds.rho_min, bounds.rho_max) if region is None else region
    nodes, _ = grid.rho_nodes(lo, hi)
    if nodes.size == 0:
        raise InputError("empty grid")
    rates = grid.rate_nodes(bounds)
    if constant_storage is None:
        constant_storage = bounds.rate_unbounded
    basis = StorageBasis(problem, storage_name, n, bounds.p, constant_storage)
    for k, rho in enumerate(nodes):
        P = basis.at(rho)
        floor = 0.0 if storage_psd_only else eps_p
        problem.add_psd(P - floor * np.eye(n), f"{storage_name}>0@{k}")
        for j, rd in enumerate(rates if not constant_storage or rates.shape[0] == 1 else rates[:1]):
            for c_idx, expr in enumerate(builder(rho, rd, P, basis.rate_term(rd))):
                problem.add_nsd(expr, f"lmi{c_idx}@rho{k}/rate{j}")
    return problem, basis, nodes
