"""Terminal claims ``g`` with derivative and growth metadata."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ParameterError
from .models import Domain


@dataclass(frozen=True)
class Payoff:
    """A nonnegative terminal claim.

    ``g_prime`` is ``None`` when no derivative is available.  For Lipschitz
    payoffs with kinks (``lipschitz_only``) it returns the left derivative at
    the kinks.  ``growth_K`` is the constant ``K`` of the whole-line bound
    ``0 <= g(x) <= K max(1, exp(-K x))``.
    """

    name: str
    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray] | None
    bounded: bool
    growth_K: float | None = None
    lipschitz_only: bool = False
    non_lipschitz_at_zero: bool = False

    def __call__(self, x):
        return self.g(x)


def _const(value):
    return lambda x: np.full(np.shape(x), value, dtype=float)


def bond_payoff() -> Payoff:
    """Zero-coupon bond: ``g = 1``."""
    return Payoff("bond", _const(1.0), _const(0.0), bounded=True, growth_K=1.0)


def _derivative(f, h=1e-6):
    def df(x):
        x = np.asarray(x, dtype=float)
        return (f(x + h) - f(x - h)) / (2.0 * h)

    return df


def call_on_bond(
    bond_price_fn: Callable[[np.ndarray], np.ndarray],
    strike: float,
    *,
    bond_price_derivative: Callable[[np.ndarray], np.ndarray] | None = None,
    domain: Domain = Domain.HALF_LINE,
    growth_K: float | None = None,
) -> Payoff:
    """Call on a bond, ``g(x) = max(P(x) - strike, 0)``.

    ``bond_price_fn`` is the bond price at the option's expiry as a function
    of the short rate.  Without ``bond_price_derivative`` the slope of ``P``
    is central-differenced.
    """
    if not strike > 0:
        raise ParameterError("strike", f"must be positive, got {strike}")
    strike = float(strike)
    dP = bond_price_derivative or _derivative(bond_price_fn)

    def g(x):
        return np.maximum(np.asarray(bond_price_fn(x), dtype=float) - strike, 0.0)

    def g_prime(x):
        x = np.asarray(x, dtype=float)
        p = np.asarray(bond_price_fn(x), dtype=float)
        # P decreasing in x: the left side of the kink is in the money
        return np.where(p >= strike, np.asarray(dP(x), dtype=float), 0.0)

    return Payoff(
        f"call_on_bond(K={strike:g})",
        g,
        g_prime,
        bounded=domain is Domain.HALF_LINE,
        growth_K=growth_K,
        lipschitz_only=True,
    )


def counterexample_payoff() -> Payoff:
    """``g(x) = exp(-2 sqrt(x))``: bounded but not Lipschitz at ``x = 0``."""

    def g(x):
        return np.exp(-2.0 * np.sqrt(np.asarray(x, dtype=float)))

    def g_prime(x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            bad = float(np.ravel(x)[np.flatnonzero(np.ravel(x) <= 0)[0]])
            raise DomainError(f"g'(x) of exp(-2 sqrt(x)) is undefined at x = {bad:g}")
        r = np.sqrt(x)
        return -np.exp(-2.0 * r) / r

    return Payoff("counterexample", g, g_prime, bounded=True, non_lipschitz_at_zero=True)


def custom_table(points: Sequence[Sequence[float]]) -> Payoff:
    """Piecewise-linear payoff through ``(x, g)`` points, flat outside them."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise ParameterError("points", "need at least two (x, g) pairs")
    xs, gs = arr[:, 0], arr[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise ParameterError("points", "x values must be strictly increasing")
    if np.any(gs < 0):
        raise ParameterError("points", "payoff values must be nonnegative")
    slopes = np.diff(gs) / np.diff(xs)

    def g(x):
        return np.interp(x, xs, gs)

    def g_prime(x):
        x = np.asarray(x, dtype=float)
        # segment to the left of x, so kinks get the left derivative
        idx = np.searchsorted(xs, x, side="left") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)

    return Payoff("custom_table", g, g_prime, bounded=True, lipschitz_only=True)


def require_nonnegative(payoff: Payoff, values: np.ndarray, where: str = "") -> None:
    if np.any(values < 0):
        raise DomainError(f"payoff {payoff.name} is negative{(' ' + where) if where else ''}")
