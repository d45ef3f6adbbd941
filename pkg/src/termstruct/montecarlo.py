"""Monte Carlo evaluation of the stochastic representations.

Three estimators share one Euler-Maruyama stepper:

* :func:`price_u`: ``E[exp(-int X ds) g(X(T))]``, the price;
* :func:`price_v`: the representation of ``u_x`` through the drift-shifted
  process ``dY = (alpha_x + beta) dt + sigma dW``;
* :func:`price_ux_firstvariation`: ``u_x`` via the first variation
  ``xi = dX/dx`` (needs a bounded ``sigma_x``).

All time integrals use the trapezoidal rule on the step grid.  With equal
``seed``, ``n_paths`` and step count every estimator consumes the same
Brownian increments, which gives common random numbers across estimators.

Pathwise uniqueness of the shifted SDE is assumed for every model; it cannot
be checked numerically.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, UnsupportedModelError
from .models import ModelSpec
from .payoffs import Payoff, require_nonnegative

UProvider = Callable[[np.ndarray, float], np.ndarray]


class Scheme(enum.Enum):
    EULER_FULL_TRUNCATION = "EulerFullTruncation"
    EULER_REFLECT = "EulerReflect"


@dataclass(frozen=True)
class McConfig:
    """Simulation settings; ``n_steps`` overrides ``steps_per_year``."""

    seed: int
    n_paths: int = 100_000
    steps_per_year: int = 256
    n_steps: int | None = None
    scheme: Scheme = Scheme.EULER_FULL_TRUNCATION

    def steps_for(self, horizon: float) -> int:
        if self.n_steps is not None:
            return int(self.n_steps)
        return max(1, math.ceil(self.steps_per_year * horizon - 1e-9))


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_paths: int
    n_steps: int

    @classmethod
    def from_samples(cls, samples: np.ndarray, n_steps: int) -> "McEstimate":
        n = samples.size
        sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
        return cls(float(np.mean(samples)), sd / math.sqrt(n), n, n_steps)

    @property
    def variance(self) -> float:
        """Sample variance of the per-path contributions."""
        return self.std_error**2 * self.n_paths

    def z_score(self, reference: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.value == reference else math.copysign(math.inf, self.value - reference)
        return (self.value - reference) / self.std_error


def merge_estimates(a: McEstimate, b: McEstimate) -> McEstimate:
    """Pool two independent partial estimates (associative)."""
    n = a.n_paths + b.n_paths
    mean = (a.n_paths * a.value + b.n_paths * b.value) / n
    ss = (
        (a.n_paths - 1) * a.variance
        + (b.n_paths - 1) * b.variance
        + a.n_paths * b.n_paths / n * (a.value - b.value) ** 2
    )
    var = ss / (n - 1) if n > 1 else 0.0
    return McEstimate(mean, math.sqrt(var / n), n, max(a.n_steps, b.n_steps))


def split_config(config: McConfig, parts: int) -> list[McConfig]:
    """Partition a run into ``parts`` batches with independent substream seeds."""
    if parts < 1 or parts > config.n_paths:
        raise ValueError("parts must be between 1 and n_paths")
    seeds = np.random.SeedSequence(config.seed).spawn(parts)
    base, extra = divmod(config.n_paths, parts)
    return [
        replace(config, seed=int(s.generate_state(1)[0]), n_paths=base + (i < extra))
        for i, s in enumerate(seeds)
    ]


@dataclass
class PathBatch:
    times: np.ndarray
    values: np.ndarray
    scheme: Scheme
    seed: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "step", "time", "value"])
            for p, row in enumerate(self.values):
                for k, (s, v) in enumerate(zip(self.times, row)):
                    w.writerow([p, k, repr(float(s)), repr(float(v))])


@dataclass
class FirstVariationPath:
    xi: np.ndarray


@dataclass
class _Stepper:
    """Euler-Maruyama for ``dZ = drift dt + sigma dW``.

    On the half-line, full truncation keeps an unclamped internal state and
    evaluates the coefficients at its positive part; the stored path is the
    positive part.  Reflection stores and continues from ``|Z|``.
    """

    model: ModelSpec
    drift: Callable
    scheme: Scheme
    internal: np.ndarray = field(repr=False)

    def step(self, s: float, dt: float, dW: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance one step; returns (evaluation state, new stored state)."""
        z = self.internal
        if not self.model.is_half_line:
            ev = z
            nxt = z + self.drift(z, s) * dt + self.model.sigma(z, s) * dW
            self.internal = nxt
            return ev, nxt
        if self.scheme is Scheme.EULER_REFLECT:
            ev = z
            nxt = np.abs(z + self.drift(z, s) * dt + self.model.sigma(z, s) * dW)
            self.internal = nxt
            return ev, nxt
        ev = np.maximum(z, 0.0)
        self.internal = z + self.drift(ev, s) * dt + self.model.sigma(ev, s) * dW
        return ev, np.maximum(self.internal, 0.0)


def _check_start(model: ModelSpec, x: float, t: float, T: float) -> None:
    if model.is_half_line and x < 0:
        raise DomainError(f"start x = {x:g} is outside the half-line domain")
    if T < t:
        raise ValueError(f"T = {T:g} precedes t = {t:g}")


def _stepper(model: ModelSpec, x: float, n_paths: int, scheme: Scheme, shifted: bool) -> _Stepper:
    if shifted:

        def drift(z, s):
            return model.alpha_x(z, s) + model.beta(z, s)

    else:
        drift = model.beta
    return _Stepper(model, drift, scheme, np.full(n_paths, float(x)))


def simulate_paths(
    model: ModelSpec,
    x: float,
    t: float,
    T: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    scheme: Scheme = Scheme.EULER_FULL_TRUNCATION,
) -> PathBatch:
    """Simulate ``n_paths`` short-rate paths on a uniform grid of ``n_steps``."""
    _check_start(model, x, t, T)
    if not T > t:
        raise ValueError("simulate_paths needs T > t")
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    times = np.linspace(t, T, n_steps + 1)
    dt = (T - t) / n_steps
    sqdt = math.sqrt(dt)
    out = np.empty((n_paths, n_steps + 1))
    out[:, 0] = x
    st = _stepper(model, x, n_paths, scheme, shifted=False)
    for k in range(n_steps):
        _, out[:, k + 1] = st.step(times[k], dt, sqdt * rng.standard_normal(n_paths))
    return PathBatch(times, out, scheme, seed)


def _xi_factor(model: ModelSpec, ev: np.ndarray, s: float, dt: float, dW: np.ndarray) -> np.ndarray:
    """One step of the linear SDE for ``xi`` with coefficients frozen at the left node.

    The exponential form is exact when ``beta_x`` and ``sigma_x`` are constant
    and keeps ``xi`` positive; the plain Euler product carries an O(dt) bias.
    """
    sx = model.sigma_x(ev, s)
    return np.exp((model.beta_x(ev, s) - 0.5 * sx * sx) * dt + sx * dW)


def simulate_first_variation(
    model: ModelSpec,
    x: float,
    t: float,
    T: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    scheme: Scheme = Scheme.EULER_FULL_TRUNCATION,
) -> tuple[PathBatch, FirstVariationPath]:
    """Co-simulate ``X`` and ``xi = dX/dx`` with the same increments."""
    if model.sigma_x is None:
        raise UnsupportedModelError(f"{model.name}: sigma_x unavailable or unbounded")
    batch = simulate_paths(model, x, t, T, n_paths, n_steps, seed, scheme)
    rng = np.random.default_rng(seed)
    dt = (T - t) / n_steps
    sqdt = math.sqrt(dt)
    xi = np.empty_like(batch.values)
    xi[:, 0] = 1.0
    st = _stepper(model, x, n_paths, scheme, shifted=False)
    for k in range(n_steps):
        s = batch.times[k]
        dW = sqdt * rng.standard_normal(n_paths)
        ev, _ = st.step(s, dt, dW)
        xi[:, k + 1] = xi[:, k] * _xi_factor(model, ev, s, dt, dW)
    return batch, FirstVariationPath(xi)


# -- per-path contributions --------------------------------------------------


def _u_samples(model, payoff, x, t, T, cfg: McConfig) -> tuple[np.ndarray, int]:
    n = cfg.steps_for(T - t)
    dt = (T - t) / n
    sqdt = math.sqrt(dt)
    rng = np.random.default_rng(cfg.seed)
    st = _stepper(model, x, cfg.n_paths, cfg.scheme, shifted=False)
    prev = np.full(cfg.n_paths, float(x))
    integral = np.zeros(cfg.n_paths)
    for k in range(n):
        _, cur = st.step(t + k * dt, dt, sqdt * rng.standard_normal(cfg.n_paths))
        integral += 0.5 * dt * (prev + cur)
        prev = cur
    gT = np.asarray(payoff.g(prev), dtype=float)
    require_nonnegative(payoff, gT, "at simulated terminal rates")
    return np.exp(-integral) * gT, n


def _g_prime(payoff: Payoff, y: np.ndarray) -> np.ndarray:
    if payoff.g_prime is None:
        raise DomainError(f"payoff {payoff.name} has no derivative g'")
    return np.asarray(payoff.g_prime(y), dtype=float)


def _v_samples(model, payoff, x, t, T, u_provider: UProvider, cfg: McConfig) -> tuple[np.ndarray, int]:
    n = cfg.steps_for(T - t)
    dt = (T - t) / n
    sqdt = math.sqrt(dt)
    rng = np.random.default_rng(cfg.seed)
    st = _stepper(model, x, cfg.n_paths, cfg.scheme, shifted=True)
    y = np.full(cfg.n_paths, float(x))
    rate = model.beta_x(y, t) - y  # integrand of the weight exponent
    log_w = np.zeros(cfg.n_paths)
    term = np.asarray(u_provider(y, t), dtype=float)  # weight * u at the left node
    outer = np.zeros(cfg.n_paths)
    for k in range(n):
        s1 = t + (k + 1) * dt
        _, y = st.step(t + k * dt, dt, sqdt * rng.standard_normal(cfg.n_paths))
        rate_new = model.beta_x(y, s1) - y
        log_w += 0.5 * dt * (rate + rate_new)
        rate = rate_new
        term_new = np.exp(log_w) * np.asarray(u_provider(y, s1), dtype=float)
        outer += 0.5 * dt * (term + term_new)
        term = term_new
    return _g_prime(payoff, y) * np.exp(log_w) - outer, n


def _ux_fv_samples(model, payoff, x, t, T, cfg: McConfig) -> tuple[np.ndarray, int]:
    if model.sigma_x is None:
        raise UnsupportedModelError(
            f"{model.name}: first-variation estimator needs a bounded sigma_x"
        )
    n = cfg.steps_for(T - t)
    dt = (T - t) / n
    sqdt = math.sqrt(dt)
    rng = np.random.default_rng(cfg.seed)
    st = _stepper(model, x, cfg.n_paths, cfg.scheme, shifted=False)
    xp = np.full(cfg.n_paths, float(x))
    xi = np.ones(cfg.n_paths)
    disc = np.zeros(cfg.n_paths)
    xi_int = np.zeros(cfg.n_paths)
    for k in range(n):
        s = t + k * dt
        dW = sqdt * rng.standard_normal(cfg.n_paths)
        ev, cur = st.step(s, dt, dW)
        xi_new = xi * _xi_factor(model, ev, s, dt, dW)
        disc += 0.5 * dt * (xp + cur)
        xi_int += 0.5 * dt * (xi + xi_new)
        xp, xi = cur, xi_new
    d = np.exp(-disc)
    gT = np.asarray(payoff.g(xp), dtype=float)
    return _g_prime(payoff, xp) * xi * d - gT * d * xi_int, n


# -- public estimators -------------------------------------------------------


def price_u(model: ModelSpec, payoff: Payoff, x: float, t: float, T: float, mc_config: McConfig) -> McEstimate:
    """Monte Carlo price ``u(x, t)``."""
    _check_start(model, x, t, T)
    if T == t:
        return McEstimate(float(payoff.g(np.asarray(x, dtype=float))), 0.0, mc_config.n_paths, 0)
    samples, n = _u_samples(model, payoff, x, t, T, mc_config)
    return McEstimate.from_samples(samples, n)


def price_v(
    model: ModelSpec,
    payoff: Payoff,
    x: float,
    t: float,
    T: float,
    u_provider: UProvider,
    mc_config: McConfig,
) -> McEstimate:
    """Monte Carlo value of the shifted-process representation of ``u_x``.

    ``u_provider(y, s)`` supplies the price along the simulated paths, e.g.
    an affine oracle or an interpolated PDE surface.
    """
    _check_start(model, x, t, T)
    if T == t:
        return McEstimate(float(_g_prime(payoff, np.asarray(x, dtype=float))), 0.0, mc_config.n_paths, 0)
    samples, n = _v_samples(model, payoff, x, t, T, u_provider, mc_config)
    return McEstimate.from_samples(samples, n)


def price_ux_firstvariation(
    model: ModelSpec, payoff: Payoff, x: float, t: float, T: float, mc_config: McConfig
) -> McEstimate:
    """Monte Carlo ``u_x`` from the first-variation process."""
    if model.sigma_x is None:
        raise UnsupportedModelError(
            f"{model.name}: first-variation estimator needs a bounded sigma_x"
        )
    _check_start(model, x, t, T)
    if T == t:
        return McEstimate(float(_g_prime(payoff, np.asarray(x, dtype=float))), 0.0, mc_config.n_paths, 0)
    samples, n = _ux_fv_samples(model, payoff, x, t, T, mc_config)
    return McEstimate.from_samples(samples, n)


@dataclass(frozen=True)
class IdentityGap:
    """Shifted-process and first-variation estimates of ``u_x`` on shared increments."""

    v: McEstimate
    first_variation: McEstimate
    difference: float
    paired_std_error: float

    @property
    def combined_std_error(self) -> float:
        """Std error of the difference treating the two estimates as independent."""
        return math.hypot(self.v.std_error, self.first_variation.std_error)


def girsanov_gap(
    model: ModelSpec,
    payoff: Payoff,
    x: float,
    t: float,
    T: float,
    u_provider: UProvider,
    mc_config: McConfig,
) -> IdentityGap:
    """Difference between :func:`price_v` and :func:`price_ux_firstvariation`.

    Both estimators draw from the same seed so the per-path differences are
    paired; ``paired_std_error`` is the standard error of those differences.
    """
    if model.sigma_x is None:
        raise UnsupportedModelError(f"{model.name}: first-variation estimator needs a bounded sigma_x")
    _check_start(model, x, t, T)
    if T == t:
        v = price_v(model, payoff, x, t, T, u_provider, mc_config)
        return IdentityGap(v, v, 0.0, 0.0)
    vs, n = _v_samples(model, payoff, x, t, T, u_provider, mc_config)
    ws, _ = _ux_fv_samples(model, payoff, x, t, T, mc_config)
    diff = vs - ws
    d = McEstimate.from_samples(diff, n)
    return IdentityGap(McEstimate.from_samples(vs, n), McEstimate.from_samples(ws, n), d.value, d.std_error)


@dataclass(frozen=True)
class ConvergenceRow:
    n_paths: int
    n_steps: int
    value: float
    std_error: float


_OPS = {"price_u": price_u, "price_v": price_v}


def mc_convergence_table(
    op: str | Callable,
    args: dict,
    path_schedule: Sequence[int],
    step_schedule: Sequence[int],
) -> list[ConvergenceRow]:
    """Re-run an estimator along paired refinement schedules.

    ``args`` holds the estimator's keyword arguments including ``mc_config``;
    row ``i`` uses ``path_schedule[i]`` paths and ``step_schedule[i]`` steps.
    A schedule of length one is broadcast against the other.
    """
    fn = _OPS[op] if isinstance(op, str) else op
    paths, steps = list(path_schedule), list(step_schedule)
    if not paths or not steps:
        raise ValueError("schedules must be non-empty")
    if len(paths) == 1:
        paths *= len(steps)
    if len(steps) == 1:
        steps *= len(paths)
    if len(paths) != len(steps):
        raise ValueError("path and step schedules differ in length")
    if any(b < a for a, b in zip(paths, paths[1:])) or any(b < a for a, b in zip(steps, steps[1:])):
        raise ValueError("schedules must be increasing")
    base: McConfig = args["mc_config"]
    rows = []
    for n_p, n_s in zip(paths, steps):
        est = fn(**{**args, "mc_config": replace(base, n_paths=int(n_p), n_steps=int(n_s))})
        rows.append(ConvergenceRow(int(n_p), est.n_steps, est.value, est.std_error))
    return rows


def refinements_consistent(rows: Sequence[ConvergenceRow], k: float = 3.0) -> bool:
    """Successive rows agree within ``k`` combined standard errors."""
    return all(
        abs(b.value - a.value) <= k * math.hypot(a.std_error, b.std_error)
        for a, b in zip(rows, rows[1:])
    )

