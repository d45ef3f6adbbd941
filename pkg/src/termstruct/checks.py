"""Named verification checks run by ``termstruct verify``.

Each check returns a :class:`CheckResult` with status ``pass``, ``fail`` or
``skipped`` and the numbers it measured.  A check that does not apply to the
configured model is skipped with a reason rather than failed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .affine import affine_boundary_check
from .config import Run, oracle_for
from .errors import RefusedRunError, TermStructError
from .models import ModelKind, counterexample_model
from .montecarlo import girsanov_gap, price_u
from .payoffs import bond_payoff, counterexample_payoff
from .pde import (
    SolutionSurface,
    SpatialGrid,
    SolverConfig,
    alpha_uxx_diagnostic,
    boundary_residual,
    solve_tse,
    u_provider_from_surface,
    uniform_ladder,
    wrong_boundary_solve,
)

DEFAULT_LEVELS = [100, 200, 400, 800]
RATIO_MIN = 1.8
ZERO_RESIDUAL = 1e-10
ALPHA_UXX_MAX = 1e-3
Z_MAX = 3.0
AFFINE_BC_MAX = 1e-8
PINNED_FACTOR = 10.0
PDE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    status: str
    measured: dict[str, Any] = field(default_factory=dict)
    reason: str | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"status": self.status, "measured": self.measured}
        if self.reason:
            out["reason"] = self.reason
        return out


def _verdict(name: str, ok: bool, measured: dict) -> CheckResult:
    return CheckResult(name, "pass" if ok else "fail", measured)


def _skip(name: str, reason: str) -> CheckResult:
    return CheckResult(name, "skipped", reason=reason)


class _Context:
    """Run plus lazily built shared artefacts (bond ladder, eval points)."""

    def __init__(self, run: Run):
        self.run = run
        self._ladder: list[SolutionSurface] | None = None

    def ladder(self) -> list[SolutionSurface]:
        if self._ladder is None:
            block = self.run.raw.get("ladder", {})
            nodes = self.run.grid.nodes
            levels = block.get("levels", DEFAULT_LEVELS)
            self._ladder = uniform_ladder(
                self.run.model,
                bond_payoff(),
                self.run.T,
                float(block.get("x_min", nodes[0])),
                float(block.get("x_max", nodes[-1])),
                levels,
                theta=float(block.get("theta", 0.5)),
                time_levels=block.get("time_levels"),
            )
        return self._ladder

    def points(self, n: int = 5) -> list[tuple[float, float]]:
        pts = [(x, t) for x, t in self.run.points if t < self.run.T]
        if not pts:
            T = self.run.T
            pts = [(0.02, 0.0), (0.05, 0.0), (0.1, 0.5 * T), (0.03, 0.25 * T), (0.08, 0.75 * T)]
        return pts[:n]


def check_girsanov_identity(ctx: _Context) -> CheckResult:
    name = "girsanov_identity"
    run = ctx.run
    m = run.model
    if m.sigma_x is None:
        return _skip(name, f"{m.name}: sigma_x unbounded or unavailable, first-variation estimator unsupported")
    oracle = oracle_for(m, run.T)
    if oracle is not None:
        provider = oracle.u_provider(run.T)
        source = "oracle"
    else:
        provider = u_provider_from_surface(solve_tse(m, bond_payoff(), run.T, run.grid, run.solver))
        source = "pde"
    cfg = run.mc_for("check.girsanov_identity")
    rows = []
    ok = True
    for x, t in ctx.points():
        gap = girsanov_gap(m, bond_payoff(), x, t, run.T, provider, cfg)
        se = gap.combined_std_error
        z = gap.difference / se if se > 0 else 0.0
        ok &= abs(gap.difference) <= Z_MAX * se
        rows.append(
            {
                "x": x,
                "t": t,
                "v": gap.v.value,
                "first_variation": gap.first_variation.value,
                "difference": gap.difference,
                "combined_std_error": se,
                "paired_std_error": gap.paired_std_error,
                "z": z,
            }
        )
    return _verdict(name, ok, {"u_provider": source, "seed": cfg.seed, "points": rows})


def check_boundary_residual_convergence(ctx: _Context) -> CheckResult:
    name = "boundary_residual_convergence"
    m = ctx.run.model
    if not m.is_half_line:
        return _skip(name, f"{m.name} lives on the whole line; there is no boundary at x=0")
    levels = [s.grid.n for s in ctx.ladder()]
    norms = [boundary_residual(s, m).max_norm for s in ctx.ladder()]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(norms, norms[1:])]
    vanishing = all(r <= ZERO_RESIDUAL for r in norms)
    ok = vanishing or all(r >= RATIO_MIN for r in ratios)
    return _verdict(name, ok, {"levels": levels, "max_norm": norms, "ratios": ratios, "vanishing": vanishing})


def check_alpha_uxx_limit(ctx: _Context) -> CheckResult:
    name = "alpha_uxx_limit"
    m = ctx.run.model
    if not m.is_half_line:
        return _skip(name, f"{m.name} lives on the whole line; the degeneracy sits at x=0 only")
    t0 = 0.5 * ctx.run.T
    levels, inner = [], []
    for s in ctx.ladder():
        levels.append(s.grid.n)
        inner.append(abs(alpha_uxx_diagnostic(s, m, t0).innermost))
    decreasing = all(b < a for a, b in zip(inner, inner[1:])) or max(inner) == 0.0
    ok = decreasing and inner[-1] <= ALPHA_UXX_MAX
    return _verdict(name, ok, {"t0": t0, "levels": levels, "innermost_abs": inner, "decreasing": decreasing})


def check_wrong_boundary_divergence(ctx: _Context) -> CheckResult:
    name = "wrong_boundary_divergence"
    run = ctx.run
    m = run.model
    if m.kind is not ModelKind.CIR:
        return _skip(name, f"needs a CIR model, got {m.name}")
    oracle = oracle_for(m, run.T)
    x = 0.05
    t = run.T - min(1.0, run.T)
    tau = run.T - t
    exact = float(oracle.price(x, tau))
    try:
        wrong = wrong_boundary_solve(m, bond_payoff(), run.T, run.grid, run.solver, lambda s: 0.5)
    except RefusedRunError as exc:
        return _skip(name, f"refused: {exc}")
    right = solve_tse(m, bond_payoff(), run.T, run.grid, run.solver)
    pinned = wrong_boundary_solve(
        m, bond_payoff(), run.T, run.grid, run.solver, lambda s: float(oracle.price(0.0, run.T - s))
    )
    err_right = abs(float(right(x, t)) - exact)
    err_wrong = abs(float(wrong(x, t)) - exact)
    err_pinned = abs(float(pinned(x, t)) - exact)
    ok = err_wrong >= PINNED_FACTOR * err_right and err_pinned <= PDE_TOL
    return _verdict(
        name,
        ok,
        {
            "x": x,
            "t": t,
            "oracle": exact,
            "correct_solver_error": err_right,
            "pinned_half_error": err_wrong,
            "pinned_oracle_error": err_pinned,
        },
    )


def check_martingale_counterexample(ctx: _Context) -> CheckResult:
    name = "martingale_counterexample"
    run = ctx.run
    m = counterexample_model()
    g = counterexample_payoff()
    cfg = run.mc_for("check.martingale_counterexample")
    rows = []
    ok = True
    for x in (0.1, 0.5, 1.0):
        for tau in (0.25, 1.0):
            est = price_u(m, g, x, 0.0, tau, cfg)
            target = float(g.g(x))
            z = est.z_score(target)
            ok &= abs(z) <= Z_MAX
            rows.append({"x": x, "tau": tau, "u_mc": est.value, "g": target, "std_error": est.std_error, "z": z})
    try:
        solve_tse(m, g, 1.0, SpatialGrid.uniform(0.0, 2.0, 100), SolverConfig(n_time_steps=50))
        refusal = None
    except RefusedRunError as exc:
        refusal = str(exc)
    ok &= refusal is not None
    return _verdict(
        name,
        ok,
        {"seed": cfg.seed, "points": rows, "max_abs_z": max(abs(r["z"]) for r in rows), "pde_refusal": refusal},
    )


def check_affine_boundary(ctx: _Context) -> CheckResult:
    name = "affine_boundary_check"
    run = ctx.run
    m = run.model
    if not m.is_half_line:
        return _skip(name, f"{m.name} lives on the whole line; there is no boundary at x=0")
    oracle = oracle_for(m, run.T)
    if oracle is None:
        return _skip(name, f"{m.name} has no affine term structure")
    taus = np.linspace(0.0, run.T, 401)
    res = affine_boundary_check(oracle, m, taus, maturity=run.T)
    return _verdict(name, res <= AFFINE_BC_MAX, {"tau_max": run.T, "max_residual": res, "source": oracle.source.value})


CHECKS: dict[str, Callable[[_Context], CheckResult]] = {
    "girsanov_identity": check_girsanov_identity,
    "boundary_residual_convergence": check_boundary_residual_convergence,
    "alpha_uxx_limit": check_alpha_uxx_limit,
    "wrong_boundary_divergence": check_wrong_boundary_divergence,
    "martingale_counterexample": check_martingale_counterexample,
    "affine_boundary_check": check_affine_boundary,
}


def run_checks(run: Run, names: list[str]) -> list[CheckResult]:
    """Run the named checks in order; engine errors become failures with the message."""
    ctx = _Context(run)
    out = []
    for name in names:
        try:
            out.append(CHECKS[name](ctx))
        except TermStructError as exc:
            out.append(CheckResult(name, "fail", reason=f"{type(exc).__name__}: {exc}"))
    return out
