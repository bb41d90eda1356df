"""Command-line entry point: bounds, check, design, simulate."""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import conic, sdp, sim, stability, synthesis
from .errors import (
    ConfigError,
    CoverageError,
    DesignInfeasibleError,
    DivergenceError,
    DomainError,
    NotConicError,
)
from .lpv import InputClass, ParameterBounds, ParameterTrajectory, system_from_dict, validate_trajectory
from .sdp import GridSpec

log = logging.getLogger("coniclpv")

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_NOT_CONIC = 2
EXIT_COVERAGE = 3
EXIT_DESIGN = 4
EXIT_USAGE = 64
OUT_ENV = "CONICLPV_OUT"

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_num_or_null = {"type": ["number", "null"]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "name": {"type": "string"},
        "system": {"type": "object", "required": ["form"], "properties": {"form": {"enum": ["affine", "grid"]}}},
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho_min", "rho_max"],
            "properties": {
                "rho_min": _vec,
                "rho_max": _vec,
                "rate_min": {"type": ["array", "null"], "items": _num_or_null},
                "rate_max": {"type": ["array", "null"], "items": _num_or_null},
            },
        },
        "sector": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a", "b"],
            "properties": {"a": _num, "b": _num},
        },
        "regions": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["lo", "hi", "conic"],
                "properties": {"lo": _vec, "hi": _vec, "conic": {"type": "boolean"}},
            },
        },
        "trajectories": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "breakpoints", "coeffs"],
                "properties": {
                    "id": {"type": "string"},
                    "breakpoints": _vec,
                    "coeffs": {"type": "array"},
                    "discrete": {"type": "boolean"},
                },
            },
        },
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "required": ["u_low", "u_high"],
            "properties": {"u_low": _num, "u_high": _num},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rho_points": {"type": "integer", "minimum": 1}, "rate_points": {"type": "integer", "minimum": 1}},
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"feas_tol": _num, "design_tol": _num},
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"delta": _num, "pole_rate": _num, "reinsert_ubar": {"type": "boolean"}},
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _num,
                "runs": {"type": "integer", "minimum": 1},
                "kinds": {"type": "array", "items": {"enum": ["constant", "sinusoid", "noise"]}},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from exc
    return cfg


class Project:
    """Typed view of a validated config plus command-line overrides."""

    def __init__(self, cfg: dict, args):
        self.cfg = cfg
        try:
            self.system = system_from_dict(cfg["system"])
            self.bounds = (
                ParameterBounds.from_dict(cfg["bounds"]) if "bounds" in cfg else ParameterBounds.for_system(self.system)
            )
            g = cfg.get("grid", {})
            self.grid = GridSpec(g.get("rho_points", 5), g.get("rate_points", 3))
            if args.grid_override:
                over = GridSpec.parse(args.grid_override)
                self.grid = GridSpec(
                    over.rho_points if "rho" in args.grid_override else self.grid.rho_points,
                    over.rate_points if "rate" in args.grid_override else self.grid.rate_points,
                )
            self.sector = conic.ConicSector(**cfg["sector"]) if "sector" in cfg else None
            self.regions = [(r["lo"], r["hi"], r["conic"]) for r in cfg.get("regions", [])]
            self.trajectories = {
                t["id"]: ParameterTrajectory(t["breakpoints"], t["coeffs"], t.get("discrete", False))
                for t in cfg.get("trajectories", [])
            }
            self.inputs = InputClass(**cfg["inputs"]) if "inputs" in cfg else None
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"config content rejected: {exc}") from exc
        tol = cfg.get("tolerances", {})
        self.feas_tol = tol.get("feas_tol", sdp.FEAS_TOL)
        self.design_tol = tol.get("design_tol", 1e-3)
        d = cfg.get("design", {})
        self.delta = args.delta if getattr(args, "delta", None) is not None else d.get("delta", 0.05)
        self.pole_rate = d.get("pole_rate", synthesis.POLE_RATE)
        self.reinsert_ubar = d.get("reinsert_ubar", False)
        s = cfg.get("simulation", {})
        self.dt = s.get("dt", sim.DT)
        self.runs = s.get("runs", 20)
        self.kinds = s.get("kinds", ["constant", "sinusoid", "noise"])
        self.seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        self.conservative = args.conservative_ubar
        out = args.out or os.environ.get(OUT_ENV) or cfg.get("output_dir") or "out"
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)

    def need(self, attr, what):
        val = getattr(self, attr)
        if val is None or (hasattr(val, "__len__") and not len(val)):
            raise ConfigError(f"config needs {what}")
        return val


def _header() -> str:
    return f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n"


def _write_report(path: Path, lines):
    path.write_text(_header() + "\n".join(lines) + "\n")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_region(spec, p):
    """'lo:hi' per parameter, comma separated."""
    try:
        parts = [s.split(":") for s in spec.split(",")]
        lo = [float(a) for a, _ in parts]
        hi = [float(b) for _, b in parts]
    except ValueError as exc:
        raise ConfigError(f"bad --region {spec!r}; expected lo:hi[,lo:hi...]") from exc
    if len(lo) != p:
        raise ConfigError(f"--region needs {p} intervals")
    return np.array(lo), np.array(hi)


def cmd_bounds(proj: Project, args) -> int:
    region = _parse_region(args.region, proj.system.p) if args.region else None
    try:
        sector, cert = conic.find_conic_bounds(proj.system, region, proj.bounds, proj.grid, feas_tol=proj.feas_tol)
    except NotConicError as exc:
        print(f"NotConic: {exc}", file=sys.stderr)
        return EXIT_NOT_CONIC
    _write_json(proj.out / "bounds_certificate.json", cert.to_dict())
    _write_report(
        proj.out / "bounds.txt",
        [
            f"sector a = {sector.a:.10g}",
            f"sector b = {sector.b:.10g}",
            f"center = {sector.center:.10g}, radius = {sector.radius:.10g}",
            f"max residual = {cert.max_residual:.3e} (feas_tol {proj.feas_tol:.1e})",
            f"grid = rho:{proj.grid.rho_points} rate:{proj.grid.rate_points}, nodes = {len(cert.nodes)}",
        ],
    )
    print(f"sector [{sector.a:.6g}, {sector.b:.6g}]")
    return EXIT_OK


def _certificate(proj: Project):
    sector = proj.need("sector", "a sector")
    regions = proj.regions
    if not regions:
        regions = conic.split_parameter_range(proj.system, sector, feas_tol=proj.feas_tol)
    return conic.certify(proj.system, sector, regions, proj.bounds, proj.grid, proj.feas_tol)


def cmd_check(proj: Project, args) -> int:
    trajs = proj.need("trajectories", "trajectories")
    inputs = proj.need("inputs", "an input class")
    if args.trajectory:
        if args.trajectory not in trajs:
            raise ConfigError(f"unknown trajectory id {args.trajectory!r}")
        trajs = {args.trajectory: trajs[args.trajectory]}
    try:
        for tid, traj in trajs.items():
            rep = validate_trajectory(traj, ParameterBounds(proj.system.lo, proj.system.hi, p=proj.system.p))
            if rep.max_range_violation > 1e-9:
                raise CoverageError(f"trajectory {tid} leaves the parameter box by {rep.max_range_violation:.3g}")
        cert = _certificate(proj)
        _write_json(proj.out / "certificate.json", cert.to_dict())
        lines = [f"sector [{cert.sector.a:.10g}, {cert.sector.b:.10g}]"]
        for tid, traj in trajs.items():
            part = conic.certificate_partition(cert, traj)
            rows = []
            for s, e, c in part.intervals:
                t = np.linspace(s, e, 1000)
                rho = traj(np.clip(t, s, np.nextafter(e, s))) if traj.discrete else traj(t)
                val = np.trapezoid(cert.eps(rho) if c else cert.alpha(rho), t)
                rows.append({"start": s, "end": e, "label": "conic" if c else "nonconic", "integral": float(val)})
            sim.write_csv(
                proj.out / f"partition_{tid}.csv",
                {
                    "start": [r["start"] for r in rows],
                    "end": [r["end"] for r in rows],
                    "conic": [1.0 if r["label"] == "conic" else 0.0 for r in rows],
                    "integral": [r["integral"] for r in rows],
                },
            )
            if traj.discrete:
                verdict = conic.discrete_margin(cert, traj, inputs, proj.conservative)
                kind = "segment-weighted"
            else:
                verdict = conic.average_conicity_continuous(cert, part, traj, inputs, proj.conservative)
                kind = "integral"
            lines += [
                f"trajectory {tid}: t_c = {part.t_c:.6g}, t_nc = {part.t_nc:.6g}",
                f"  {kind} margin = {verdict.margin:.10g} -> {'holds' if verdict.holds else 'fails'}",
            ]
            for r in rows:
                lines.append(f"  [{r['start']:.6g}, {r['end']:.6g}] {r['label']:8s} integral {r['integral']:.6g}")
            if not traj.discrete:
                meshes = [traj.horizon / 2**k for k in range(3, 8)]
                errs = conic.riemann_convergence_check(cert, traj, meshes, inputs, proj.conservative, part)
                sim.write_csv(proj.out / f"riemann_{tid}.csv", {"mesh": meshes, "error": errs})
                lines.append("  riemann: " + ", ".join(f"{h:.4g}:{e:.3e}" for h, e in zip(meshes, errs)))
    except (CoverageError, DomainError) as exc:
        print(f"coverage: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    _write_report(proj.out / "check.txt", lines)
    print("\n".join(lines))
    return EXIT_OK


def cmd_design(proj: Project, args) -> int:
    trajs = list(proj.need("trajectories", "trajectories").values())
    inputs = proj.need("inputs", "an input class")
    reinsert = proj.reinsert_ubar or proj.conservative
    try:
        res = synthesis.design_nominal_cone(
            proj.system, trajs, inputs, proj.bounds, proj.grid, proj.delta, proj.design_tol,
            proj.pole_rate, reinsert, proj.conservative, feas_tol=proj.feas_tol,
        )
    except DesignInfeasibleError as exc:
        print(f"design infeasible: {exc} (best residual {exc.best_residual:.6g})", file=sys.stderr)
        return EXIT_DESIGN
    except NotConicError as exc:
        print(f"NotConic: {exc}", file=sys.stderr)
        return EXIT_NOT_CONIC
    out = res.to_dict()
    out["delta"] = proj.delta
    out["pole_rate"] = proj.pole_rate
    out["baseline"] = None
    if res.baseline_sector is not None:
        base = synthesis.evaluate_candidate(
            proj.system, res.baseline_sector.center, res.baseline_sector.radius, trajs, inputs, proj.bounds,
            proj.grid, proj.delta, proj.pole_rate, reinsert, proj.conservative, proj.feas_tol,
        )
        out["baseline"] = {
            "plant_sector": base.plant_sector.to_dict(),
            "controller_sector": base.controller_sector.to_dict() if base.controller_sector else None,
            "residual": base.residual,
        }
    _write_json(proj.out / "design.json", out)
    _write_report(
        proj.out / "design.txt",
        [
            f"nominal plant sector [{res.plant_sector.a:.10g}, {res.plant_sector.b:.10g}] radius {res.radius:.10g}",
            f"controller sector [{res.controller_sector.a:.10g}, {res.controller_sector.b:.10g}]",
            f"baseline radius {res.baseline_radius:.10g}" if res.baseline_sector else "no worst-case cone exists",
            f"int eps_cl = {res.int_eps:.6g}, int alpha_cl = {res.int_alpha:.6g}, residual = {res.residual:.3e}",
            f"equality within tol: {res.equality_met}, method: {res.method}",
            f"gamma = {res.gain.gamma:.6g}" if res.gain else "gamma undefined",
        ],
    )
    print(f"nominal radius {res.radius:.6g} (baseline {res.baseline_radius})")
    return EXIT_OK


def cmd_simulate(proj: Project, args) -> int:
    if not args.design or not Path(args.design).is_file():
        raise ConfigError(f"design file not found: {args.design}")
    try:
        d = json.loads(Path(args.design).read_text())
        sp = conic.ConicSector(**d["plant_sector"])
        sc = conic.ConicSector(**d["controller_sector"])
        pole_rate = d.get("pole_rate", proj.pole_rate)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"design file invalid: {exc}") from exc
    trajs = list(proj.need("trajectories", "trajectories").values())
    inputs = proj.need("inputs", "an input class")
    pair = stability.SectorPair(sp, sc)
    certified = stability.check_sector_conditions(pair).stable
    try:
        gamma = stability.l2_gain_estimate(pair, proj.system.m).gamma
    except Exception:  # noqa: BLE001 - reported, not fatal
        gamma = float("nan")
    controller = synthesis.realize_conic_controller(sc, proj.system.m, pole_rate, synthesis.REALIZE_SHRINK)
    cl = synthesis.assemble_closed_loop(proj.system, controller, proj.grid)
    rows = {"seed": [], "gain": [], "iqc": [], "gamma": [], "pass": [], "diverged": []}
    diverged_certified = False
    for k in range(proj.runs):
        seed = proj.seed + k
        traj = trajs[k % len(trajs)]
        kind = proj.kinds[k % len(proj.kinds)]
        specs = [sim.SignalSpec(kind, inputs, proj.system.m, seed * 2 + j, proj.dt) for j in range(2)]
        u_c, u_p = (sim.generate_input(s, traj.horizon, traj.t0) for s in specs)
        try:
            tr = sim.simulate_feedback(cl, traj, u_c, u_p, dt=proj.dt)
        except DivergenceError as exc:
            log.warning("seed %d diverged at t=%.4g", seed, exc.time)
            diverged_certified |= certified
            for key, v in (("seed", seed), ("gain", np.nan), ("iqc", np.nan), ("gamma", gamma), ("pass", 0), ("diverged", 1)):
                rows[key].append(v)
            continue
        tr.to_csv(proj.out / f"trace_seed{seed}.csv")
        g = sim.empirical_l2_gain([tr])
        iqc = stability.verify_feedback_iqc(pair, tr)
        ok = g <= 1.1 * gamma and iqc >= -1e-4 * traj.horizon
        for key, v in (("seed", seed), ("gain", g), ("iqc", iqc), ("gamma", gamma), ("pass", int(ok)), ("diverged", 0)):
            rows[key].append(v)
    sim.write_csv(proj.out / "gains.csv", rows)
    lines = [f"plant [{sp.a:.6g}, {sp.b:.6g}] controller [{sc.a:.6g}, {sc.b:.6g}] certified={certified}"]
    lines += [
        f"seed {s}: gain={g:.6g} iqc={q:.6g} pass={p} diverged={dv}"
        for s, g, q, p, dv in zip(rows["seed"], rows["gain"], rows["iqc"], rows["pass"], rows["diverged"])
    ]
    _write_report(proj.out / "simulate.txt", lines)
    print("\n".join(lines))
    if any(rows["diverged"]) and not certified:
        log.warning("uncertified configuration diverged (expected)")
    return EXIT_DIVERGED if diverged_certified else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coniclpv", description="Conic-sector analysis and design for LPV systems.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, then config, then ./out)")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--grid-override", help="grid spec such as rho=9,rate=3")
    common.add_argument("--conservative-ubar", action="store_true", help="use the upper input bound in margins")
    common.add_argument("--delta", type=float, help="controller sector shrink")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    b = sub.add_parser("bounds", parents=[common], help="tightest certified sector")
    b.add_argument("--region", help="sub-box as lo:hi per parameter")
    c = sub.add_parser("check", parents=[common], help="average conicity of configured trajectories")
    c.add_argument("--trajectory", help="trajectory id (default: all)")
    sub.add_parser("design", parents=[common], help="nominal-cone controller design")
    s = sub.add_parser("simulate", parents=[common], help="closed-loop runs of a design")
    s.add_argument("--design", help="design.json written by the design command")
    return p


COMMANDS = {"bounds": cmd_bounds, "check": cmd_check, "design": cmd_design, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        proj = Project(load_config(args.config), args)
        return COMMANDS[args.command](proj, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
