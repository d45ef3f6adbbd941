"""Theta-scheme solver for the term structure equation

    u_t + sigma**2 / 2 u_xx + beta u_x = x u,    u(x, T) = g(x),

on a truncated spatial grid.

On the half-line the row at ``x = 0`` discretizes ``u_t + beta(0, t) u_x = 0``
(the diffusion vanishes there) with a three-point forward difference for
``u_x``; it is the only boundary information the price needs.  The far end,
and both ends on the whole line, use a far-field closure: ``u_xx = 0``
(linear extrapolation) by default, or pinned values.

Each time step solves one banded system with two sub- and super-diagonals,
which accommodates the one-sided boundary rows.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import DivergenceError, DomainError, RefusedRunError, StabilityError
from .models import Domain, ModelKind, ModelSpec
from .payoffs import Payoff, require_nonnegative


class GridKind(enum.Enum):
    UNIFORM = "Uniform"
    SINH_STRETCHED = "SinhStretched"


@dataclass(frozen=True)
class SpatialGrid:
    nodes: np.ndarray
    kind: GridKind = GridKind.UNIFORM
    center: float | None = None
    strength: float | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 9:
            raise ValueError("a grid needs at least 8 intervals")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, x_min: float, x_max: float, n: int) -> "SpatialGrid":
        """``n`` equal intervals on ``[x_min, x_max]``."""
        nodes = np.linspace(x_min, x_max, n + 1)
        nodes[0], nodes[-1] = x_min, x_max
        return cls(nodes)

    @classmethod
    def sinh_stretched(
        cls, x_min: float, x_max: float, n: int, center: float, strength: float
    ) -> "SpatialGrid":
        """Nodes clustered around ``center``; smaller ``strength`` clusters harder."""
        if strength <= 0:
            raise ValueError("strength must be positive")
        lo = math.asinh((x_min - center) / strength)
        hi = math.asinh((x_max - center) / strength)
        xi = np.linspace(0.0, 1.0, n + 1)
        nodes = center + strength * np.sinh(lo + (hi - lo) * xi)
        nodes[0], nodes[-1] = x_min, x_max
        return cls(nodes, GridKind.SINH_STRETCHED, center, strength)

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    def check_domain(self, domain: Domain) -> None:
        x0, xn = self.nodes[0], self.nodes[-1]
        if domain is Domain.HALF_LINE and x0 != 0.0:
            raise DomainError(f"half-line grids must start at x=0, got {x0:g}")
        if domain is Domain.WHOLE_LINE and not x0 < 0.0 < xn:
            raise DomainError(f"whole-line grids must straddle 0, got [{x0:g}, {xn:g}]")


def whole_line_lower_bound(growth_K: float, max_scale: float) -> float:
    """Rate below which the growth envelope ``K exp(-K x)`` exceeds ``max_scale``.

    Used to pick the left end of a whole-line grid so that the exponential
    growth of prices at negative rates stays within a declared scale.
    """
    if growth_K <= 0 or max_scale <= growth_K:
        raise ValueError("need 0 < growth_K < max_scale")
    return -math.log(max_scale / growth_K) / growth_K


class DirichletZeroSecond:
    """Far-field closure ``u_xx = 0``: the end node is linearly extrapolated."""

    def __repr__(self):
        return "DirichletZeroSecond()"


@dataclass(frozen=True)
class DirichletValue:
    """Far-field closure pinning ``u(x_end, t) = fn(x_end, t)``."""

    fn: Callable[[float, float], float]


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping and closure settings.

    ``rannacher_steps=None`` means 2 fully implicit start-up steps for kinked
    payoffs, else 0.  ``monotone=None`` switches the monotone stencils on
    exactly when ``theta == 1``: a two-point boundary row, upwinded
    convection in rows whose central weights would be negative and, with the
    ``u_xx = 0`` far field, a first-order inward row where the drift leaves
    the grid and a zero-slope row where it enters.  Those stencils are first
    order where they act, but they make the fully implicit step order
    preserving.
    """

    theta: float = 0.5
    n_time_steps: int = 400
    far_field_policy: DirichletZeroSecond | DirichletValue = field(default_factory=DirichletZeroSecond)
    rannacher_steps: int | None = None
    monotone: bool | None = None

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.n_time_steps < 1:
            raise ValueError("n_time_steps must be >= 1")
        if self.rannacher_steps is not None and self.rannacher_steps < 0:
            raise ValueError("rannacher_steps must be >= 0")

    def startup_steps(self, payoff: Payoff) -> int:
        if self.rannacher_steps is not None:
            return self.rannacher_steps
        return 2 if payoff.lipschitz_only else 0

    @property
    def use_monotone(self) -> bool:
        return self.theta == 1.0 if self.monotone is None else bool(self.monotone)

    def describe(self) -> dict:
        policy = (
            "DirichletZeroSecond"
            if isinstance(self.far_field_policy, DirichletZeroSecond)
            else "DirichletValue"
        )
        return {
            "theta": self.theta,
            "n_time_steps": self.n_time_steps,
            "far_field_policy": policy,
            "rannacher_steps": self.rannacher_steps,
            "monotone": self.use_monotone,
        }


@dataclass(frozen=True)
class SolutionSurface:
    """``values[j, i] = u(grid.nodes[i], times[j])``."""

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray
    model: ModelSpec
    payoff: Payoff
    config: SolverConfig
    boundary: str = "natural"

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def slice_index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"t = {t:g} is not a time node of the surface")
        return j

    def __call__(self, x, t):
        """Bilinear interpolation; queries off the grid raise :class:`DomainError`."""
        nodes, times = self.grid.nodes, self.times
        x = np.asarray(x, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        slack_x = 1e-12 * max(1.0, nodes[-1] - nodes[0])
        slack_t = 1e-12 * max(1.0, self.T)
        out_x = (x < nodes[0] - slack_x) | (x > nodes[-1] + slack_x)
        out_t = (t_arr < times[0] - slack_t) | (t_arr > times[-1] + slack_t)
        if np.any(out_x) or np.any(out_t):
            xb, tb = np.broadcast_arrays(x, t_arr)
            k = np.flatnonzero(np.ravel(out_x | out_t))[0]
            raise DomainError(
                f"query ({np.ravel(xb)[k]:g}, {np.ravel(tb)[k]:g}) outside "
                f"[{nodes[0]:g}, {nodes[-1]:g}] x [{times[0]:g}, {times[-1]:g}]"
            )
        x = np.clip(x, nodes[0], nodes[-1])
        t_arr = np.clip(t_arr, times[0], times[-1])
        i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
        j = np.clip(np.searchsorted(times, t_arr, side="right") - 1, 0, times.size - 2)
        wx = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
        wt = (t_arr - times[j]) / (times[j + 1] - times[j])
        v = self.values
        lower = (1 - wx) * v[j, i] + wx * v[j, i + 1]
        upper = (1 - wx) * v[j + 1, i] + wx * v[j + 1, i + 1]
        return (1 - wt) * lower + wt * upper

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t\\x"] + [f"{x:.17g}" for x in self.grid.nodes])
            for t, row in zip(self.times, self.values):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])

    def write_sidecar(self, path, diagnostics: dict[str, Any] | None = None) -> None:
        meta = {
            "model": self.model.describe(),
            "payoff": self.payoff.name,
            "config": self.config.describe(),
            "grid": {
                "kind": self.grid.kind.value,
                "n": self.grid.n,
                "x_min": float(self.grid.nodes[0]),
                "x_max": float(self.grid.nodes[-1]),
                "center": self.grid.center,
                "strength": self.grid.strength,
            },
            "T": self.T,
            "boundary": self.boundary,
            "diagnostics": diagnostics or {},
        }
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


# -- stencils ----------------------------------------------------------------


def _interior_weights(nodes: np.ndarray):
    """Three-point weights for u_x and u_xx at nodes 1..N-1 on a nonuniform grid."""
    hm = nodes[1:-1] - nodes[:-2]
    hp = nodes[2:] - nodes[1:-1]
    s = hm + hp
    d1 = np.stack([-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s)], axis=1)
    d2 = np.stack([2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s)], axis=1)
    return d1, d2


def forward_weights(x0: float, x1: float, x2: float) -> np.ndarray:
    """Second-order one-sided weights for ``f'(x0)`` from ``f(x0), f(x1), f(x2)``."""
    h1, h2 = x1 - x0, x2 - x1
    return np.array([-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))])


def _extrapolation_row(xa: float, xb: float, xc: float) -> np.ndarray:
    """Weights on (u_a, u_b, u_c) whose vanishing makes the three points collinear."""
    h1, h2 = xb - xa, xc - xb
    return np.array([1.0 / h1, -(1.0 / h1 + 1.0 / h2), 1.0 / h2])


class _Operator:
    """Spatial operator ``L u = alpha u_xx + beta u_x - x u`` in 5-diagonal row form.

    ``rows[i, k]`` multiplies ``u[i + k - 2]``.  Row 0 holds the boundary
    relation on the half-line; rows flagged in ``algebraic`` are constraints
    replaced in the linear system.
    """

    def __init__(self, model: ModelSpec, nodes: np.ndarray, left: str, monotone: bool = False):
        self.model = model
        self.nodes = nodes
        self.left = left  # "natural", "far", or "dirichlet"
        self.monotone = monotone
        self.d1, self.d2 = _interior_weights(nodes)
        if monotone:
            h1 = nodes[1] - nodes[0]
            self.fw = np.array([-1.0 / h1, 1.0 / h1, 0.0])
            hm = nodes[1:-1] - nodes[:-2]
            hp = nodes[2:] - nodes[1:-1]
            zero = np.zeros_like(hm)
            self.d1_fwd = np.stack([zero, -1.0 / hp, 1.0 / hp], axis=1)
            self.d1_bwd = np.stack([-1.0 / hm, 1.0 / hm, zero], axis=1)
        else:
            self.fw = forward_weights(nodes[0], nodes[1], nodes[2])

    def rows(self, t: float) -> np.ndarray:
        x = self.nodes
        n = x.size
        R = np.zeros((n, 5))
        xi = x[1:-1]
        alpha = self.model.alpha(xi, t)
        beta = self.model.beta(xi, t)
        central = alpha[:, None] * self.d2 + beta[:, None] * self.d1
        if self.monotone:
            upwind = np.where((beta >= 0)[:, None], self.d1_fwd, self.d1_bwd)
            upwind = alpha[:, None] * self.d2 + beta[:, None] * upwind
            bad = (central[:, 0] < 0) | (central[:, 2] < 0)
            central = np.where(bad[:, None], upwind, central)
        R[1:-1, 1:4] = central
        R[1:-1, 2] -= xi
        if self.monotone:
            # outflow ends: drop alpha u_xx (the u_xx = 0 closure) and difference inward
            lo, hi = self.outflow(t)
            if hi:
                h = x[-1] - x[-2]
                b = float(self.model.beta(x[-1], t))
                R[-1, 1:3] = [-b / h, b / h - x[-1]]
            if lo:
                h = x[1] - x[0]
                b = float(self.model.beta(x[0], t))
                R[0, 2:4] = [-b / h - x[0], b / h]
        if self.left == "natural":
            b0 = float(self.model.beta(0.0, t))
            R[0, 2:5] = b0 * self.fw
        return R


    def outflow(self, t: float) -> tuple[bool, bool]:
        """Whether the drift leaves the domain at the left (far) end and at the right end."""
        x = self.nodes
        lo = self.left == "far" and float(self.model.beta(x[0], t)) >= 0.0
        hi = float(self.model.beta(x[-1], t)) <= 0.0
        return lo, hi


def _apply(R: np.ndarray, u: np.ndarray) -> np.ndarray:
    n = u.size
    pad = np.concatenate([[0.0, 0.0], u, [0.0, 0.0]])
    out = np.zeros(n)
    for k in range(5):
        out += R[:, k] * pad[k : k + n]
    return out


def _to_banded(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    ab = np.zeros((5, n))
    for k in range(5):
        off = k - 2
        lo, hi = max(0, -off), min(n, n - off)
        ab[2 - off, lo + off : hi + off] = M[lo:hi, k]
    return ab


def _far_field_row(policy, xa, xb, xc):
    """Extrapolation weights for a far-field row, or ``None`` for pinned values."""
    if isinstance(policy, DirichletValue):
        return None
    return _extrapolation_row(xa, xb, xc)


def _cfl_ratio(op: _Operator, times: np.ndarray, dt: float, theta: float) -> float:
    worst = 0.0
    for t in times[:: max(1, times.size // 16)].tolist() + [float(times[-1])]:
        worst = max(worst, float(np.max(np.abs(op.rows(t)[:, 2]))))
    return (1.0 - 2.0 * theta) * dt * worst


def _solve(
    model: ModelSpec,
    payoff: Payoff,
    T: float,
    grid: SpatialGrid,
    config: SolverConfig,
    pinned: Callable[[float], float] | None = None,
) -> SolutionSurface:
    if not T > 0:
        raise ValueError("T must be positive")
    grid.check_domain(model.domain)
    nodes = grid.nodes
    n = nodes.size
    M = config.n_time_steps
    times = np.linspace(0.0, T, M + 1)
    times[-1] = T
    dt = T / M

    half = model.is_half_line
    left = ("dirichlet" if pinned is not None else "natural") if half else "far"
    op = _Operator(model, nodes, left, config.use_monotone)
    outflow_rows = config.use_monotone and isinstance(config.far_field_policy, DirichletZeroSecond)
    if config.theta < 0.5:
        ratio = _cfl_ratio(op, times, dt, config.theta)
        if ratio > 1.0:
            raise StabilityError(ratio)

    policy = config.far_field_policy
    right_w = _far_field_row(policy, nodes[-3], nodes[-2], nodes[-1])
    left_w = _far_field_row(policy, nodes[0], nodes[1], nodes[2]) if left == "far" else None
    if outflow_rows:
        # inflow ends need data; linear extrapolation has a negative weight, a zero slope does not
        right_w = np.array([0.0, -1.0, 1.0])
        left_w = np.array([1.0, -1.0, 0.0]) if left == "far" else None

    values = np.empty((M + 1, n))
    gT = np.asarray(payoff.g(nodes), dtype=float)
    if not np.all(np.isfinite(gT)):
        raise DomainError(f"payoff {payoff.name} is not finite on the grid")
    require_nonnegative(payoff, gT, "on grid nodes")
    values[M] = gT

    startup = config.startup_steps(payoff)
    R_next = op.rows(times[M])
    for step, j in enumerate(range(M - 1, -1, -1)):
        theta = 1.0 if step < startup else config.theta
        R_now = op.rows(times[j])
        u_next = values[j + 1]
        rhs = u_next + (1.0 - theta) * dt * _apply(R_next, u_next)
        A = -theta * dt * R_now
        A[:, 2] += 1.0

        lo_out, hi_out = op.outflow(times[j]) if outflow_rows else (False, False)

        # left end
        if left == "dirichlet":
            A[0] = 0.0
            A[0, 2] = 1.0
            rhs[0] = pinned(times[j])
        elif left == "far" and not lo_out:
            A[0] = 0.0
            if left_w is None:
                A[0, 2] = 1.0
                rhs[0] = policy.fn(nodes[0], times[j])
            else:
                A[0, 2:5] = left_w
                rhs[0] = 0.0
        # right end
        if not hi_out:
            A[-1] = 0.0
            if right_w is None:
                A[-1, 2] = 1.0
                rhs[-1] = policy.fn(nodes[-1], times[j])
            else:
                A[-1, 0:3] = right_w
                rhs[-1] = 0.0

        u = solve_banded((2, 2), _to_banded(A), rhs)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(step + 1)
        values[j] = u
        R_next = R_now

    return SolutionSurface(
        grid, times, values, model, payoff, config, "dirichlet" if pinned is not None else "natural"
    )


def solve_tse(
    model: ModelSpec, payoff: Payoff, T: float, grid: SpatialGrid, config: SolverConfig | None = None
) -> SolutionSurface:
    """Solve backward from ``u(x, T) = g(x)`` to ``t = 0``.

    Payoffs that are not Lipschitz at ``x = 0`` are refused on the half-line:
    the price then has an infinite slope at the boundary and the boundary
    row has no meaning.  Price those with the Monte Carlo engine.
    """
    config = config or SolverConfig()
    if model.is_half_line and payoff.non_lipschitz_at_zero:
        raise RefusedRunError(
            f"payoff {payoff.name} is not Lipschitz at x=0: u_x(0,t) is infinite, so the "
            "boundary row u_t + beta u_x = 0 is ill-posed; use the Monte Carlo engine"
        )
    return _solve(model, payoff, T, grid, config)


def wrong_boundary_solve(
    model: ModelSpec,
    payoff: Payoff,
    T: float,
    grid: SpatialGrid,
    config: SolverConfig | None,
    pinned_value: Callable[[float], float],
) -> SolutionSurface:
    """Solve with the Dirichlet data ``u(0, t) = pinned_value(t)`` instead of the boundary relation.

    Only meaningful for CIR with an attainable origin (``2a < sigma**2``):
    otherwise the origin carries no boundary condition at all and the run is
    refused.
    """
    if model.kind is not ModelKind.CIR:
        raise RefusedRunError(f"wrong_boundary_solve needs a CIR model, got {model.name}")
    if not model.boundary_attainable:
        a, s = model.params["a"], model.params["sigma"]
        raise RefusedRunError(
            f"2a = {2 * a:g} >= sigma^2 = {s * s:g}: the origin is not attainable, "
            "so no boundary data can change the price"
        )
    config = config or SolverConfig()
    return _solve(model, payoff, T, grid, config, pinned=pinned_value)


def u_provider_from_surface(surface: SolutionSurface) -> Callable[[np.ndarray, float], np.ndarray]:
    """The surface as an ``(x, t) -> u`` callable for :func:`termstruct.montecarlo.price_v`."""
    return surface.__call__


# -- boundary diagnostics ----------------------------------------------------


@dataclass(frozen=True)
class BoundaryResidual:
    times: np.ndarray
    residual: np.ndarray

    @property
    def max_norm(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def boundary_residual(surface: SolutionSurface, model: ModelSpec) -> BoundaryResidual:
    """``D_t u(0, t_j) + beta(0, t_j) D_x u(0, t_j)`` at interior time slices.

    ``D_t`` is the central difference in time and ``D_x`` the second-order
    one-sided difference through nodes 0, 2 and 4, a different stencil from
    the solver's own boundary row.
    """
    if not model.is_half_line:
        raise DomainError("boundary residual is defined for half-line surfaces only")
    t, v, x = surface.times, surface.values, surface.grid.nodes
    w = forward_weights(x[0], x[2], x[4])
    ux = v[1:-1, 0] * w[0] + v[1:-1, 2] * w[1] + v[1:-1, 4] * w[2]
    ut = (v[2:, 0] - v[:-2, 0]) / (t[2:] - t[:-2])
    beta0 = np.array([float(model.beta(0.0, tj)) for tj in t[1:-1]])
    return BoundaryResidual(t[1:-1].copy(), ut + beta0 * ux)


@dataclass(frozen=True)
class DegeneracyProfile:
    x: np.ndarray
    values: np.ndarray

    @property
    def innermost(self) -> float:
        return float(self.values[0])


def alpha_uxx_diagnostic(
    surface: SolutionSurface, model: ModelSpec, t0: float, n_nodes: int = 10
) -> DegeneracyProfile:
    """``alpha(x_i, t0) D_xx u(x_i, t0)`` at the first ``n_nodes`` interior nodes."""
    if not model.is_half_line:
        raise DomainError("alpha * u_xx diagnostic is defined for half-line surfaces only")
    j = surface.slice_index(t0)
    if j in (0, surface.times.size - 1):
        raise ValueError("t0 must be an interior time slice")
    x = surface.grid.nodes
    _, d2 = _interior_weights(x[: n_nodes + 2])
    u = surface.values[j, : n_nodes + 2]
    uxx = d2[:, 0] * u[:-2] + d2[:, 1] * u[1:-1] + d2[:, 2] * u[2:]
    xs = x[1 : n_nodes + 1]
    return DegeneracyProfile(xs.copy(), model.alpha(xs, t0) * uxx)


def uniform_ladder(
    model: ModelSpec,
    payoff: Payoff,
    T: float,
    x_min: float,
    x_max: float,
    levels: list[int],
    theta: float = 0.5,
    time_levels: list[int] | None = None,
) -> list[SolutionSurface]:
    """Solves on uniform grids with ``levels[k]`` intervals and as many time steps.

    Levels are independent and could run concurrently; they run in order here.
    """
    time_levels = time_levels or levels
    return [
        solve_tse(model, payoff, T, SpatialGrid.uniform(x_min, x_max, n), SolverConfig(theta, m))
        for n, m in zip(levels, time_levels)
    ]
