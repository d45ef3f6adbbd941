"""Affine bond prices ``P(x, tau) = A(tau) exp(-B(tau) x)``.

For ``beta = beta0 + beta1 x`` and ``sigma**2 = s0 + s1 x`` the bond price is
exponential-affine with

    B' = 1 + beta1 B - s1 B**2 / 2,        B(0) = 0,
    (log A)' = s0 B**2 / 2 - beta0 B,      log A(0) = 0,

where ``'`` is ``d/dtau`` and the coefficients are evaluated at calendar time
``maturity - tau``.  :func:`riccati_solve` integrates this system with
classical RK4 and is the ground truth; the closed forms in
:func:`cir_affine` and :func:`vasicek_affine` are checked against it each
time they are built.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, ParameterError, UnsupportedModelError
from .models import ModelKind, ModelSpec, make_model


class Source(enum.Enum):
    CLOSED_FORM = "ClosedForm"
    RICCATI_NUMERIC = "RiccatiNumeric"


@dataclass(frozen=True)
class AffineCoefficients:
    """``A(tau)``, ``B(tau)`` and ``d log A / d tau`` on ``[0, tau_max]``.

    ``tau_max`` is ``inf`` for closed forms.  ``maturity`` is the calendar
    maturity the coefficients refer to (only relevant for time-dependent
    models).
    """

    A: Callable
    B: Callable
    dlogA: Callable
    tau_max: float
    source: Source
    maturity: float | None = None

    def _check(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0) or np.any(tau > self.tau_max * (1 + 1e-12)):
            raise DomainError(f"tau outside [0, {self.tau_max:g}]")
        return tau

    def coefficients(self, tau) -> tuple[np.ndarray, np.ndarray]:
        tau = self._check(tau)
        return self.A(tau), self.B(tau)

    def price(self, x, tau):
        A, B = self.coefficients(tau)
        return A * np.exp(-B * np.asarray(x, dtype=float))

    def price_x(self, x, tau):
        """Spatial derivative ``-B A exp(-B x)`` of the bond price."""
        A, B = self.coefficients(tau)
        return -B * A * np.exp(-B * np.asarray(x, dtype=float))

    def dA(self, tau):
        tau = self._check(tau)
        return self.A(tau) * self.dlogA(tau)

    def u_provider(self, maturity: float) -> Callable[[np.ndarray, float], np.ndarray]:
        """Bond price as a function of ``(x, t)`` for a bond maturing at ``maturity``."""
        return lambda x, t: self.price(x, maturity - t)

    def to_csv(self, path, taus: Sequence[float]) -> None:
        A, B = self.coefficients(np.asarray(taus, dtype=float))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "A", "B"])
            for row in zip(taus, A, B):
                w.writerow([f"{float(v):.17g}" for v in row])


def _params(params: Mapping | ModelSpec) -> Mapping:
    return params.params if isinstance(params, ModelSpec) else params


def cir_affine(params: Mapping | ModelSpec) -> AffineCoefficients:
    """Closed-form CIR coefficients for ``dX = (a - b X) dt + sigma sqrt(X) dW``."""
    p = _params(params)
    try:
        a, b, s = float(p["a"]), float(p["b"]), float(p["sigma"])
    except KeyError as exc:
        raise ParameterError(exc.args[0], "required by CIR coefficients") from None
    if a < 0:
        raise ParameterError("a", "CIR requires a >= 0")
    if s <= 0:
        raise ParameterError("sigma", "CIR requires sigma > 0")
    g = math.sqrt(b * b + 2.0 * s * s)
    power = 2.0 * a / (s * s)

    def denom(tau):
        return (g + b) * np.expm1(g * tau) + 2.0 * g

    def B(tau):
        tau = np.asarray(tau, dtype=float)
        return 2.0 * np.expm1(g * tau) / denom(tau)

    def logA(tau):
        tau = np.asarray(tau, dtype=float)
        return power * (math.log(2.0 * g) + 0.5 * (g + b) * tau - np.log(denom(tau)))

    def dlogA(tau):
        tau = np.asarray(tau, dtype=float)
        return power * (0.5 * (g + b) - (g + b) * g * np.exp(g * tau) / denom(tau))

    out = AffineCoefficients(lambda tau: np.exp(logA(tau)), B, dlogA, math.inf, Source.CLOSED_FORM)
    _cross_check(out, ModelKind.CIR, {"a": a, "b": b, "sigma": s})
    return out


def vasicek_affine(params: Mapping | ModelSpec) -> AffineCoefficients:
    """Closed-form Vasicek coefficients for ``dX = (a - b X) dt + sigma dW``."""
    p = _params(params)
    try:
        a, b, s = float(p["a"]), float(p["b"]), float(p["sigma"])
    except KeyError as exc:
        raise ParameterError(exc.args[0], "required by Vasicek coefficients") from None
    if b <= 0:
        raise ParameterError("b", "Vasicek requires b > 0")
    if s <= 0:
        raise ParameterError("sigma", "Vasicek requires sigma > 0")
    c = a / b - s * s / (2.0 * b * b)

    def B(tau):
        return -np.expm1(-b * np.asarray(tau, dtype=float)) / b

    def logA(tau):
        tau = np.asarray(tau, dtype=float)
        Bt = B(tau)
        return (Bt - tau) * c - s * s * Bt * Bt / (4.0 * b)

    def dlogA(tau):
        tau = np.asarray(tau, dtype=float)
        dB = np.exp(-b * tau)
        return (dB - 1.0) * c - s * s * B(tau) * dB / (2.0 * b)

    out = AffineCoefficients(lambda tau: np.exp(logA(tau)), B, dlogA, math.inf, Source.CLOSED_FORM)
    _cross_check(out, ModelKind.VASICEK, {"a": a, "b": b, "sigma": s})
    return out


CROSS_CHECK_TAUS = (0.5, 1.0, 2.0)
CROSS_CHECK_TOL = 1e-10


def _cross_check(coeffs: AffineCoefficients, kind: ModelKind, params: dict) -> None:
    """Compare a closed form with the RK4 solution; a mismatch means a transcription error."""
    ref = riccati_solve(make_model(kind, params), max(CROSS_CHECK_TAUS))
    taus = np.array(CROSS_CHECK_TAUS)
    A0, B0 = coeffs.coefficients(taus)
    A1, B1 = ref.coefficients(taus)
    gap = float(max(np.max(np.abs(A0 - A1)), np.max(np.abs(B0 - B1))))
    if not gap <= CROSS_CHECK_TOL:
        raise ArithmeticError(f"{kind.value} closed form disagrees with the Riccati solution by {gap:.3g}")


def _rhs(affine, maturity: float, tau: float, y: np.ndarray) -> np.ndarray:
    beta0, beta1, s0, s1 = affine(maturity - tau)
    B = y[1]
    return np.array([0.5 * s0 * B * B - beta0 * B, 1.0 + beta1 * B - 0.5 * s1 * B * B])


def riccati_solve(
    model: ModelSpec,
    tau_max: float,
    n_ode_steps: int | None = None,
    maturity: float | None = None,
) -> AffineCoefficients:
    """Integrate the Riccati system for ``(log A, B)`` with classical RK4.

    ``maturity`` fixes the calendar time ``maturity - tau`` at which
    time-dependent coefficients are read (default ``tau_max``).  Values
    between ODE nodes come from cubic Hermite interpolation using the exact
    right-hand side at the nodes.
    """
    if model.affine is None or model.kind not in (ModelKind.CIR, ModelKind.VASICEK, ModelKind.HULL_WHITE):
        raise UnsupportedModelError(f"{model.name} has no affine term structure")
    if not tau_max > 0:
        raise ValueError("tau_max must be positive")
    n = n_ode_steps if n_ode_steps is not None else max(64, math.ceil(400 * tau_max))
    if n < 16:
        raise ValueError("n_ode_steps must be >= 16")
    maturity = float(tau_max if maturity is None else maturity)
    aff = model.affine
    h = tau_max / n
    taus = np.linspace(0.0, tau_max, n + 1)
    ys = np.zeros((n + 1, 2))
    fs = np.zeros((n + 1, 2))
    y = np.zeros(2)
    for k in range(n):
        tk = taus[k]
        k1 = _rhs(aff, maturity, tk, y)
        k2 = _rhs(aff, maturity, tk + 0.5 * h, y + 0.5 * h * k1)
        k3 = _rhs(aff, maturity, tk + 0.5 * h, y + 0.5 * h * k2)
        k4 = _rhs(aff, maturity, tk + h, y + h * k3)
        fs[k] = k1
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys[k + 1] = y
    fs[n] = _rhs(aff, maturity, tau_max, y)
    log_a = CubicHermiteSpline(taus, ys[:, 0], fs[:, 0])
    b_spl = CubicHermiteSpline(taus, ys[:, 1], fs[:, 1])

    def A(tau):
        tau = np.asarray(tau, dtype=float)
        return np.where(tau == 0.0, 1.0, np.exp(log_a(tau)))

    def B(tau):
        tau = np.asarray(tau, dtype=float)
        return np.where(tau == 0.0, 0.0, b_spl(tau))

    def dlogA(tau):
        tau = np.asarray(tau, dtype=float)
        flat = np.atleast_1d(tau)
        out = np.array([_rhs(aff, maturity, float(tk), np.array([0.0, float(b_spl(tk))]))[0] for tk in flat])
        return out.reshape(tau.shape)

    return AffineCoefficients(A, B, dlogA, float(tau_max), Source.RICCATI_NUMERIC, maturity)


def closed_form(model: ModelSpec) -> AffineCoefficients:
    """Closed-form coefficients for constant-coefficient CIR or Vasicek models."""
    if model.kind is ModelKind.CIR:
        return cir_affine(model.params)
    if model.kind is ModelKind.VASICEK:
        return vasicek_affine(model.params)
    if model.kind is ModelKind.HULL_WHITE and model.time_homogeneous:
        return cir_affine({k: float(v.values[0]) for k, v in model.params.items()})
    raise UnsupportedModelError(f"no closed form for {model.name}")


def affine_boundary_check(
    coeffs: AffineCoefficients,
    model: ModelSpec,
    tau_grid: Sequence[float],
    maturity: float | None = None,
) -> float:
    """Max over ``tau_grid`` of ``|u_t(0,t) + beta(0,t) u_x(0,t)|`` for the affine price.

    With ``u(0, t) = A(tau)``: ``u_t = -A'(tau)`` and ``u_x = -B(tau) A(tau)``.
    """
    if not model.is_half_line:
        raise DomainError(f"{model.name} is a whole-line model; the boundary condition lives at x=0")
    taus = np.asarray(tau_grid, dtype=float)
    maturity = float(taus.max() if maturity is None else maturity)
    A, B = coeffs.coefficients(taus)
    dA = coeffs.dA(taus)
    beta0 = np.array([float(model.beta(0.0, maturity - tk)) for tk in taus])
    return float(np.max(np.abs(-dA - beta0 * B * A)))
