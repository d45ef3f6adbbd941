"""Command-line entry point: ``termstruct price | verify | convergence``.

Exit codes: 0 when everything ran and passed, 1 when a check failed, 2 when
the configuration was rejected.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy

from .checks import run_checks
from .config import CHECK_NAMES, Run, build_run, finite_or_none, load_config, oracle_for
from .errors import ConfigError, RefusedRunError, TermStructError
from .montecarlo import price_u
from .pde import SpatialGrid, SolverConfig, boundary_residual, solve_tse

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{float(v):.17g}"


def _versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "artifact": pkg}


def _out_dir(run: Run, override: str | None) -> Path:
    base = Path(override or run.raw.get("output_dir", "runs"))
    path = base / run.run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: Any) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _manifest(run: Run, command: str, timings: dict[str, float], extra: dict | None = None) -> dict:
    out = {
        "command": command,
        "run_id": run.run_id,
        "config": run.raw,
        "resolved": {
            "model": run.model.describe(),
            "payoff": run.payoff.name,
            "grid": {
                "kind": run.grid.kind.value,
                "x_min": float(run.grid.nodes[0]),
                "x_max": float(run.grid.nodes[-1]),
                "n": run.grid.n,
                "center": run.grid.center,
                "strength": run.grid.strength,
            },
            "solver": run.solver.describe(),
            "engines": run.engines,
        },
        "versions": _versions(),
        "timings_s": timings,
    }
    if extra:
        out.update(extra)
    return out


# -- price -------------------------------------------------------------------

PRICE_COLUMNS = ["x", "t", "u_pde", "u_mc", "mc_se", "u_oracle", "abs_diff_pde_oracle", "z_score_mc_oracle"]


def cmd_price(run: Run, out: Path, quiet: bool) -> int:
    timings: dict[str, float] = {}
    notes: dict[str, Any] = {}
    surface = None
    if "pde" in run.engines:
        t0 = time.perf_counter()
        try:
            surface = solve_tse(run.model, run.payoff, run.T, run.grid, run.solver)
        except RefusedRunError as exc:
            notes["pde_refused"] = str(exc)
        timings["pde"] = time.perf_counter() - t0

    oracle = None
    if "oracle" in run.engines:
        if run.payoff.name == "bond":
            oracle = oracle_for(run.model, run.T)
        if oracle is None:
            notes["oracle_unavailable"] = f"no affine oracle for {run.payoff.name} under {run.model.name}"

    mc_cfg = None
    if "mc" in run.engines:
        mc_cfg = run.mc_for("engine.mc")
        notes["mc_seed"] = mc_cfg.seed

    rows = []
    t_mc = 0.0
    for x, t in run.points:
        u_pde = float(surface(x, t)) if surface is not None else None
        u_mc = se = None
        if mc_cfg is not None:
            t0 = time.perf_counter()
            est = price_u(run.model, run.payoff, x, t, run.T, mc_cfg)
            t_mc += time.perf_counter() - t0
            u_mc, se = est.value, est.std_error
        u_or = float(oracle.price(x, run.T - t)) if oracle is not None else None
        diff = abs(u_pde - u_or) if u_pde is not None and u_or is not None else None
        z = None
        if u_mc is not None and u_or is not None:
            z = (u_mc - u_or) / se if se > 0 else (0.0 if u_mc == u_or else math.copysign(math.inf, u_mc - u_or))
        rows.append([x, t, u_pde, u_mc, se, u_or, diff, finite_or_none(z)])
    if mc_cfg is not None:
        timings["mc"] = t_mc

    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(PRICE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    _write_json(out / "manifest.json", _manifest(run, "price", timings, {"notes": notes}))
    if not quiet:
        print(f"wrote {out / 'results.csv'} ({len(rows)} rows)")
        for k, v in notes.items():
            print(f"  {k}: {v}")
    return EXIT_OK


# -- verify ------------------------------------------------------------------


def cmd_verify(run: Run, out: Path, quiet: bool, checks: Sequence[str] | None) -> int:
    names = list(checks) if checks else run.checks
    t0 = time.perf_counter()
    results = run_checks(run, names)
    elapsed = time.perf_counter() - t0
    report = {
        "run_id": run.run_id,
        "checks": {r.name: r.to_json() for r in results},
        "all_passed": all(r.status != "fail" for r in results),
    }
    _write_json(out / "report.json", report)
    _write_json(out / "manifest.json", _manifest(run, "verify", {"checks": elapsed}, {"checks_run": names}))
    if not quiet:
        for r in results:
            suffix = f" ({r.reason})" if r.reason else ""
            print(f"{r.status.upper():7s} {r.name}{suffix}")
    return EXIT_OK if report["all_passed"] else EXIT_FAIL


# -- convergence -------------------------------------------------------------

CONVERGENCE_COLUMNS = ["h", "dt", "error_vs_oracle", "boundary_residual_max", "observed_order"]


def interior_error(surface, oracle, T: float) -> float:
    """Max error at ``t = 0`` over nodes in the inner half of the grid.

    The outer half is excluded because the linear far-field closure carries a
    truncation error that does not shrink with the mesh.
    """
    x = surface.grid.nodes
    lo, hi = x[0], x[-1]
    mask = (x >= (lo if lo == 0.0 else 0.5 * lo)) & (x <= 0.5 * hi)
    return float(np.max(np.abs(surface.values[0, mask] - oracle.price(x[mask], T))))


def cmd_convergence(run: Run, out: Path, quiet: bool) -> int:
    block = run.raw.get("ladder")
    if block is None:
        raise ConfigError(["ladder: required by the convergence command"])
    nodes = run.grid.nodes
    x_min = float(block.get("x_min", nodes[0]))
    x_max = float(block.get("x_max", nodes[-1]))
    levels = block["levels"]
    time_levels = block.get("time_levels", levels)
    if len(time_levels) != len(levels):
        raise ConfigError(["ladder.time_levels: must match ladder.levels in length"])
    theta = float(block.get("theta", run.solver.theta))
    oracle = oracle_for(run.model, run.T) if run.payoff.name == "bond" else None

    rows = []
    t0 = time.perf_counter()
    prev = None
    for n, m in zip(levels, time_levels):
        grid = SpatialGrid.uniform(x_min, x_max, n)
        surface = solve_tse(run.model, run.payoff, run.T, grid, SolverConfig(theta, m))
        h, dt = (x_max - x_min) / n, run.T / m
        err = interior_error(surface, oracle, run.T) if oracle is not None else None
        res = boundary_residual(surface, run.model).max_norm if run.model.is_half_line else None
        order = None
        if prev is not None and err is not None and prev[1] is not None and err > 0 and prev[1] > 0:
            order = math.log(prev[1] / err) / math.log(prev[0] / h)
        rows.append([h, dt, err, res, order])
        prev = (h, err)
    elapsed = time.perf_counter() - t0

    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    _write_json(out / "manifest.json", _manifest(run, "convergence", {"ladder": elapsed}))
    if not quiet:
        print(f"wrote {out / 'convergence.csv'} ({len(rows)} levels)")
        for r in rows:
            print("  " + "  ".join("-" if v is None else f"{v:.4g}" for v in r))
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="termstruct", description="Short-rate bond pricing and verification runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("price", "price the configured claim at the evaluation points"),
        ("verify", "run verification checks and write report.json"),
        ("convergence", "run a grid refinement ladder and write convergence.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON run configuration")
        p.add_argument("--out", help="output directory (default: config output_dir or ./runs)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        if name == "verify":
            p.add_argument(
                "--checks",
                help="comma-separated subset of: " + ", ".join(CHECK_NAMES),
            )
    return parser


def _parse_checks(text: str | None) -> list[str] | None:
    if not text:
        return None
    names = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in names if c not in CHECK_NAMES]
    if bad:
        raise ConfigError([f"--checks: unknown check {c!r}" for c in bad])
    return names


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        checks = _parse_checks(getattr(args, "checks", None))
        run = build_run(load_config(args.config))
        out = _out_dir(run, args.out)
        if args.command == "price":
            return cmd_price(run, out, args.quiet)
        if args.command == "verify":
            return cmd_verify(run, out, args.quiet, checks)
        return cmd_convergence(run, out, args.quiet)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TermStructError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
