"""Single-factor short-rate models as evaluable coefficient functions.

Every model carries its drift ``beta(x, t)``, volatility ``sigma(x, t)`` and
the spatial derivatives ``alpha_x`` (of ``alpha = sigma**2 / 2``) and
``beta_x``.  Built-in models code these derivatives analytically; custom
models may omit them, in which case they are built by finite differencing.

All coefficient functions accept numpy arrays for ``x`` and scalar or
broadcastable ``t``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ParameterError

Coefficient = Callable[[Any, Any], np.ndarray]


class Domain(enum.Enum):
    HALF_LINE = "HalfLine"
    WHOLE_LINE = "WholeLine"


class ModelKind(enum.Enum):
    CIR = "CIR"
    DOTHAN = "Dothan"
    HULL_WHITE = "HullWhite"
    CEV = "CEV"
    VASICEK = "Vasicek"
    CUSTOM = "Custom"

    @classmethod
    def parse(cls, kind: "str | ModelKind") -> "ModelKind":
        if isinstance(kind, cls):
            return kind
        for member in cls:
            if str(kind).lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ParameterError("kind", f"unknown model kind {kind!r}")


class PiecewiseLinear:
    """Piecewise-linear interpolant through ``(t, value)`` knots.

    Held constant beyond the first and last knot.  Knots are reproduced
    exactly.
    """

    def __init__(self, knots: Sequence[Sequence[float]] | float):
        if np.isscalar(knots):
            knots = [(0.0, float(knots))]
        arr = np.asarray(knots, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
            raise ValueError("knots must be a non-empty list of (t, value) pairs")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise ValueError("knot times must be strictly increasing")
        self.times = arr[:, 0].copy()
        self.values = arr[:, 1].copy()

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def to_list(self) -> list[list[float]]:
        return [[float(t), float(v)] for t, v in zip(self.times, self.values)]


@dataclass(frozen=True)
class ModelSpec:
    """A short-rate model ``dX = beta(X, t) dt + sigma(X, t) dW``.

    ``sigma_x`` is only set when the volatility is continuously
    differentiable with a bounded derivative, which the first-variation
    estimator requires.  ``affine`` maps ``t`` to ``(beta0, beta1, s0, s1)``
    with ``beta = beta0 + beta1 x`` and ``sigma**2 = s0 + s1 x``; it is
    ``None`` for models without an affine term structure.
    """

    name: str
    kind: ModelKind
    domain: Domain
    beta: Coefficient
    sigma: Coefficient
    alpha_x: Coefficient
    beta_x: Coefficient
    params: Mapping[str, Any] = field(default_factory=dict)
    sigma_x: Coefficient | None = None
    affine: Callable[[float], tuple[float, float, float, float]] | None = None
    time_homogeneous: bool = True

    def alpha(self, x, t):
        s = self.sigma(x, t)
        return 0.5 * s * s

    @property
    def is_half_line(self) -> bool:
        return self.domain is Domain.HALF_LINE

    @property
    def boundary_attainable(self) -> bool | None:
        """Whether x=0 is hit with positive probability (CIR only).

        ``None`` when the model gives no closed-form criterion.
        """
        if self.kind is ModelKind.CIR:
            return 2.0 * self.params["a"] < self.params["sigma"] ** 2
        return None

    def describe(self) -> dict:
        params = {}
        for k, v in self.params.items():
            if isinstance(v, PiecewiseLinear):
                params[k] = v.to_list()
            elif isinstance(v, (int, float)):
                params[k] = float(v)
        return {"name": self.name, "kind": self.kind.value, "domain": self.domain.value, "params": params}


def _full(x, value):
    return np.full(np.shape(x), value, dtype=float)


def _require(params: Mapping[str, Any], keys: Sequence[str], kind: str) -> dict:
    out = {}
    for key in keys:
        if key not in params:
            raise ParameterError(key, f"required by {kind} model")
        out[key] = params[key]
    return out


def _real(params: Mapping[str, Any], key: str) -> float:
    value = params[key]
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterError(key, f"expected a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise ParameterError(key, "must be finite")
    return value


def _cir(p: Mapping[str, Any]) -> ModelSpec:
    p = _require(p, ("a", "b", "sigma"), "CIR")
    a, b, s = _real(p, "a"), _real(p, "b"), _real(p, "sigma")
    if a < 0:
        raise ParameterError("a", "CIR requires a >= 0")
    if s <= 0:
        raise ParameterError("sigma", "CIR requires sigma > 0")
    return ModelSpec(
        name="CIR",
        kind=ModelKind.CIR,
        domain=Domain.HALF_LINE,
        beta=lambda x, t: a - b * np.asarray(x, dtype=float),
        sigma=lambda x, t: s * np.sqrt(np.asarray(x, dtype=float)),
        alpha_x=lambda x, t: _full(x, 0.5 * s * s),
        beta_x=lambda x, t: _full(x, -b),
        params={"a": a, "b": b, "sigma": s},
        affine=lambda t: (a, -b, 0.0, s * s),
    )


def _dothan(p: Mapping[str, Any]) -> ModelSpec:
    p = _require(p, ("a", "sigma"), "Dothan")
    a, s = _real(p, "a"), _real(p, "sigma")
    if s <= 0:
        raise ParameterError("sigma", "Dothan requires sigma > 0")
    return ModelSpec(
        name="Dothan",
        kind=ModelKind.DOTHAN,
        domain=Domain.HALF_LINE,
        beta=lambda x, t: a * np.asarray(x, dtype=float),
        sigma=lambda x, t: s * np.asarray(x, dtype=float),
        alpha_x=lambda x, t: s * s * np.asarray(x, dtype=float),
        beta_x=lambda x, t: _full(x, a),
        sigma_x=lambda x, t: _full(x, s),
        params={"a": a, "sigma": s},
    )


def _cev(p: Mapping[str, Any]) -> ModelSpec:
    p = _require(p, ("a", "b", "sigma", "gamma"), "CEV")
    a, b, s, g = (_real(p, k) for k in ("a", "b", "sigma", "gamma"))
    if not 0.5 < g <= 1.0:
        raise ParameterError("gamma", f"CEV requires gamma in (1/2, 1], got {g}")
    if s <= 0:
        raise ParameterError("sigma", "CEV requires sigma > 0")

    def sigma(x, t):
        return s * np.power(np.asarray(x, dtype=float), g)

    def alpha_x(x, t):
        return g * s * s * np.power(np.asarray(x, dtype=float), 2.0 * g - 1.0)

    return ModelSpec(
        name="CEV",
        kind=ModelKind.CEV,
        domain=Domain.HALF_LINE,
        beta=lambda x, t: b - a * np.asarray(x, dtype=float),
        sigma=sigma,
        alpha_x=alpha_x,
        beta_x=lambda x, t: _full(x, -a),
        # bounded only in the geometric case
        sigma_x=(lambda x, t: _full(x, s)) if g == 1.0 else None,
        params={"a": a, "b": b, "sigma": s, "gamma": g},
    )


def _vasicek(p: Mapping[str, Any]) -> ModelSpec:
    p = _require(p, ("a", "b", "sigma"), "Vasicek")
    a, b, s = _real(p, "a"), _real(p, "b"), _real(p, "sigma")
    if b <= 0:
        raise ParameterError("b", "Vasicek requires b > 0")
    if s <= 0:
        raise ParameterError("sigma", "Vasicek requires sigma > 0")
    return ModelSpec(
        name="Vasicek",
        kind=ModelKind.VASICEK,
        domain=Domain.WHOLE_LINE,
        beta=lambda x, t: a - b * np.asarray(x, dtype=float),
        sigma=lambda x, t: _full(x, s),
        alpha_x=lambda x, t: _full(x, 0.0),
        beta_x=lambda x, t: _full(x, -b),
        sigma_x=lambda x, t: _full(x, 0.0),
        params={"a": a, "b": b, "sigma": s},
        affine=lambda t: (a, -b, s * s, 0.0),
    )


def _hull_white(p: Mapping[str, Any]) -> ModelSpec:
    p = _require(p, ("a", "b", "sigma"), "HullWhite")
    tables = {}
    for key in ("a", "b", "sigma"):
        try:
            tables[key] = PiecewiseLinear(p[key])
        except (TypeError, ValueError) as exc:
            raise ParameterError(key, f"invalid coefficient table: {exc}") from None
    a_t, b_t, s_t = tables["a"], tables["b"], tables["sigma"]
    if np.any(a_t.values < 0):
        raise ParameterError("a", "HullWhite requires a(t) >= 0 at every knot")
    if np.any(s_t.values <= 0):
        raise ParameterError("sigma", "HullWhite requires sigma(t) > 0 at every knot")

    def beta(x, t):
        return a_t(t) - b_t(t) * np.asarray(x, dtype=float)

    def sigma(x, t):
        return s_t(t) * np.sqrt(np.asarray(x, dtype=float))

    def alpha_x(x, t):
        return np.broadcast_to(0.5 * s_t(t) ** 2, np.shape(x)).astype(float)

    def beta_x(x, t):
        return np.broadcast_to(-b_t(t), np.shape(x)).astype(float)

    def affine(t):
        return float(a_t(t)), -float(b_t(t)), 0.0, float(s_t(t)) ** 2

    return ModelSpec(
        name="HullWhite",
        kind=ModelKind.HULL_WHITE,
        domain=Domain.HALF_LINE,
        beta=beta,
        sigma=sigma,
        alpha_x=alpha_x,
        beta_x=beta_x,
        params=tables,
        affine=affine,
        time_homogeneous=all(tab.is_constant for tab in tables.values()),
    )


def _difference_step(x):
    return np.maximum(1e-5, 1e-5 * np.abs(x))


def _differentiate(f: Coefficient, domain: Domain) -> Coefficient:
    """Second-order finite-difference derivative of ``f`` in ``x``.

    Central where possible; on the half-line, points with ``x - h < 0`` use
    the three-point forward formula so that ``f`` is never evaluated at a
    negative rate.
    """

    def df(x, t):
        x = np.asarray(x, dtype=float)
        h = _difference_step(x)
        if domain is Domain.WHOLE_LINE:
            return (f(x + h, t) - f(x - h, t)) / (2.0 * h)
        near = x - h < 0
        xs = np.where(near, h, x)  # keep the central branch evaluable
        central = (f(xs + h, t) - f(xs - h, t)) / (2.0 * h)
        if not np.any(near):
            return central
        forward = (-3.0 * f(x, t) + 4.0 * f(x + h, t) - f(x + 2.0 * h, t)) / (2.0 * h)
        return np.where(near, forward, central)

    return df


def custom_model(
    beta: Coefficient,
    sigma: Coefficient,
    *,
    alpha_x: Coefficient | None = None,
    beta_x: Coefficient | None = None,
    sigma_x: Coefficient | None = None,
    domain: Domain | str = Domain.HALF_LINE,
    name: str = "Custom",
    params: Mapping[str, Any] | None = None,
) -> ModelSpec:
    """Wrap user coefficient functions as a model.

    Missing ``alpha_x`` / ``beta_x`` are built by finite differencing of
    ``sigma**2 / 2`` and ``beta`` with step ``max(1e-5, 1e-5 |x|)``.
    """
    domain = Domain(domain) if isinstance(domain, str) else domain

    def vector(f):
        return lambda x, t: np.broadcast_to(
            np.asarray(f(np.asarray(x, dtype=float), t), dtype=float), np.shape(x)
        ).astype(float)

    beta_v, sigma_v = vector(beta), vector(sigma)

    def alpha(x, t):
        s = sigma_v(x, t)
        return 0.5 * s * s

    return ModelSpec(
        name=name,
        kind=ModelKind.CUSTOM,
        domain=domain,
        beta=beta_v,
        sigma=sigma_v,
        alpha_x=vector(alpha_x) if alpha_x is not None else _differentiate(alpha, domain),
        beta_x=vector(beta_x) if beta_x is not None else _differentiate(beta_v, domain),
        sigma_x=vector(sigma_x) if sigma_x is not None else None,
        params=dict(params or {}),
        time_homogeneous=False,
    )


_BUILDERS = {
    ModelKind.CIR: _cir,
    ModelKind.DOTHAN: _dothan,
    ModelKind.CEV: _cev,
    ModelKind.VASICEK: _vasicek,
    ModelKind.HULL_WHITE: _hull_white,
}


def counterexample_model() -> ModelSpec:
    """``beta = x / 2``, ``sigma = sqrt(2) x``.

    Under this model ``exp(-2 sqrt(X))`` discounted at the short rate is a
    martingale, so the price of that claim equals the claim itself.
    """
    root2 = math.sqrt(2.0)
    return custom_model(
        lambda x, t: 0.5 * x,
        lambda x, t: root2 * x,
        alpha_x=lambda x, t: 2.0 * x,
        beta_x=lambda x, t: 0.5,
        sigma_x=lambda x, t: root2,
        name="counterexample",
    )


def make_model(kind: str | ModelKind, params: Mapping[str, Any] | None = None, **custom) -> ModelSpec:
    """Build a model of the given kind.

    Built-in kinds take their parameters from ``params``:

    * ``CIR``: ``a``, ``b``, ``sigma``; ``beta = a - b x``, ``sigma = sigma sqrt(x)``
    * ``Dothan``: ``a``, ``sigma``; ``beta = a x``, ``sigma = sigma x``
    * ``CEV``: ``a``, ``b``, ``sigma``, ``gamma``; ``beta = b - a x``, ``sigma = sigma x**gamma``
    * ``Vasicek``: ``a``, ``b``, ``sigma``; ``beta = a - b x``, constant ``sigma``
    * ``HullWhite``: ``a``, ``b``, ``sigma`` as scalars or ``(t, value)`` tables,
      with the CIR form and time-dependent coefficients

    ``Custom`` forwards ``custom`` keyword arguments to :func:`custom_model`.
    """
    kind = ModelKind.parse(kind)
    params = dict(params or {})
    if kind is ModelKind.CUSTOM:
        if "beta" not in custom or "sigma" not in custom:
            raise ParameterError("beta" if "beta" not in custom else "sigma", "required by Custom model")
        return custom_model(params=params, **custom)
    if custom:
        raise ParameterError(next(iter(custom)), f"not accepted by {kind.value} model")
    return _BUILDERS[kind](params)


# -- hypothesis validation ---------------------------------------------------


@dataclass
class ClauseResult:
    clause: str
    passed: bool
    witness: tuple[float, float] | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    model: str
    clauses: list[ClauseResult]
    growth_constant: float
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.clause == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[ClauseResult]:
        return [c for c in self.clauses if not c.passed]


def default_sample_grid(domain: Domain, T: float) -> list[tuple[float, float]]:
    """41 log-spaced rates up to 10 by 21 uniform times on ``[0, T]``."""
    ts = np.linspace(0.0, T, 21)
    if domain is Domain.HALF_LINE:
        xs = np.concatenate([[0.0], np.geomspace(1e-4, 10.0, 40)])
    else:
        pos = np.geomspace(1e-4, 10.0, 20)
        xs = np.concatenate([-pos[::-1], [0.0], pos])
    return [(float(x), float(t)) for t in ts for x in xs]


def _first_violation(mask, xs, ts):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    return float(xs[idx[0]]), float(ts[idx[0]])


def _clause(name, bad, xs, ts, detail=""):
    witness = _first_violation(bad, xs, ts)
    return ClauseResult(name, witness is None, witness, detail)


def validate_hypothesis(
    model: ModelSpec, T: float, sample_grid: Sequence[tuple[float, float]] | None = None
) -> ValidationReport:
    """Check the model's admissibility clauses on sample points.

    Clauses are verified by sampling only.  Violations are report entries
    carrying the first witnessing ``(x, t)``; the smallest linear-growth
    constant consistent with the samples is reported alongside.
    """
    grid = default_sample_grid(model.domain, T) if sample_grid is None else list(sample_grid)
    if not grid:
        raise ValueError("sample_grid must be non-empty")
    pts = np.asarray(grid, dtype=float)
    xs, ts = pts[:, 0], pts[:, 1]
    if model.is_half_line and np.any(xs < 0):
        raise ValueError("sample_grid leaves the half-line domain")

    with np.errstate(all="ignore"):
        beta = np.asarray(model.beta(xs, ts), dtype=float)
        sigma = np.asarray(model.sigma(xs, ts), dtype=float)
        alpha_x = np.asarray(model.alpha_x(xs, ts), dtype=float)
        beta_x = np.asarray(model.beta_x(xs, ts), dtype=float)

    clauses: list[ClauseResult] = []
    notes = [
        "Hoelder continuity of alpha_x cannot be verified by sampling; only finiteness "
        "on the samples is checked."
    ]
    finite = np.isfinite(beta) & np.isfinite(sigma) & np.isfinite(alpha_x)

    if model.is_half_line:
        at_zero = xs == 0.0
        clauses.append(_clause("sigma(0,t) = 0", at_zero & (sigma != 0.0), xs, ts))
        clauses.append(_clause("beta(0,t) >= 0", at_zero & ~(beta >= 0.0), xs, ts))
        clauses.append(_clause("sigma(x,t) != 0 for x > 0", (xs > 0) & (sigma == 0.0), xs, ts))
        growth = (np.abs(beta) + np.abs(sigma) + np.abs(alpha_x)) / (1.0 + xs)
        C = float(np.max(np.where(finite, growth, np.inf)))
        clauses.append(
            _clause(
                "|beta| + |sigma| + |alpha_x| <= C(1+x)",
                ~finite,
                xs,
                ts,
                detail=f"C = {C:.6g}",
            )
        )
    else:
        clauses.append(_clause("sigma(x,t) != 0", ~(np.abs(sigma) > 0.0), xs, ts))
        c_sigma = np.abs(sigma) / (1.0 + np.maximum(xs, 0.0))
        c_beta = np.abs(beta) / (1.0 + np.abs(xs))
        C = float(max(np.max(np.where(finite, c_sigma, np.inf)), np.max(np.where(finite, c_beta, np.inf))))
        clauses.append(_clause("|sigma| <= C(1+max(x,0))", ~finite, xs, ts, detail=f"C = {C:.6g}"))
        clauses.append(_clause("|beta| <= C(1+|x|)", ~finite, xs, ts, detail=f"C = {C:.6g}"))
        notes.append("Lipschitz continuity in x is not checked beyond finiteness of beta_x.")

    clauses.append(_clause("alpha_x bounded on samples", ~np.isfinite(alpha_x), xs, ts))
    clauses.append(_clause("beta_x bounded on samples", ~np.isfinite(beta_x), xs, ts))

    # alpha_x against sigma * sigma_x, sigma differenced at interior points
    interior = xs > 0 if model.is_half_line else np.ones_like(xs, dtype=bool)
    h = 1e-4 * np.maximum(np.abs(xs), 1e-3)
    with np.errstate(all="ignore"):
        sig_x = (model.sigma(xs + h, ts) - model.sigma(xs - h, ts)) / (2.0 * h)
        mismatch = np.abs(alpha_x - sigma * sig_x)
        tol = 1e-5 * (1.0 + np.abs(alpha_x) + np.abs(sigma * sig_x))
    bad = interior & ~(mismatch <= tol)
    clauses.append(_clause("alpha_x consistent with sigma * sigma_x", bad, xs, ts))

    return ValidationReport(model.name, clauses, C, notes)
