import math

import numpy as np
import pytest

from termstruct.affine import cir_affine
from termstruct.errors import DomainError, ParameterError
from termstruct.payoffs import bond_payoff, call_on_bond, counterexample_payoff, custom_table

# (A e^{-B x} - 0.95)^+ at x = 0.02 from a 4000-step RK4 Riccati run, CIR a=0.04 b=0.5 sigma=0.2, tau=1
CALL_CIR_REF = 0.01787017989964923


class TestBond:
    def test_values(self):
        p = bond_payoff()
        assert p.g(0.3) == 1.0
        assert p.g_prime(5.0) == 0.0
        assert p.bounded

    def test_vectorised(self):
        np.testing.assert_array_equal(bond_payoff().g(np.zeros(4)), np.ones(4))


class TestCallOnBond:
    def test_constant_bond_price(self):
        p = call_on_bond(lambda x: np.ones_like(np.asarray(x, dtype=float)), 0.4)
        np.testing.assert_allclose(p.g(np.linspace(0, 3, 7)), 0.6)

    def test_out_of_the_money_everywhere(self):
        p = call_on_bond(lambda x: np.exp(-np.asarray(x)), 1.0)
        np.testing.assert_array_equal(p.g(np.linspace(0, 3, 7)), 0.0)

    def test_cir_bond_call_value(self):
        c = cir_affine({"a": 0.04, "b": 0.5, "sigma": 0.2})
        p = call_on_bond(lambda x: c.price(x, 1.0), 0.95, bond_price_derivative=lambda x: c.price_x(x, 1.0))
        assert float(p.g(0.02)) == pytest.approx(CALL_CIR_REF, abs=1e-10)

    def test_kink_metadata_and_left_derivative(self):
        p = call_on_bond(lambda x: np.exp(-np.asarray(x)), 0.5, bond_price_derivative=lambda x: -np.exp(-np.asarray(x)))
        kink = math.log(2.0)
        assert p.lipschitz_only and p.bounded
        assert float(p.g_prime(kink)) == pytest.approx(-0.5)
        assert float(p.g_prime(kink + 0.1)) == 0.0

    def test_differenced_slope(self):
        p = call_on_bond(lambda x: np.exp(-np.asarray(x)), 0.5)
        assert float(p.g_prime(0.1)) == pytest.approx(-math.exp(-0.1), rel=1e-7)

    @pytest.mark.parametrize("strike", [0.0, -1.0])
    def test_strike_must_be_positive(self, strike):
        with pytest.raises(ParameterError):
            call_on_bond(lambda x: x, strike)

    def test_monotone_when_bond_price_is(self):
        c = cir_affine({"a": 0.01, "b": 0.5, "sigma": 0.3})
        p = call_on_bond(lambda x: c.price(x, 2.0), 0.9)
        vals = p.g(np.linspace(0, 2, 201))
        assert np.all(np.diff(vals) <= 0)


class TestCounterexample:
    def test_values(self):
        p = counterexample_payoff()
        assert float(p.g(0.0)) == 1.0
        assert float(p.g(1.0)) == pytest.approx(math.exp(-2.0))
        assert p.non_lipschitz_at_zero

    def test_derivative_undefined_at_zero(self):
        with pytest.raises(DomainError):
            counterexample_payoff().g_prime(0.0)

    def test_derivative_positive_x(self):
        x = 0.25
        assert float(counterexample_payoff().g_prime(x)) == pytest.approx(-math.exp(-1.0) / 0.5)


class TestCustomTable:
    def test_interpolates_and_flat_outside(self):
        p = custom_table([[0.0, 1.0], [1.0, 0.0], [2.0, 0.5]])
        assert float(p.g(0.5)) == 0.5
        assert float(p.g(5.0)) == 0.5
        assert float(p.g_prime(0.5)) == -1.0
        assert float(p.g_prime(1.0)) == -1.0  # left derivative at a kink
        assert float(p.g_prime(3.0)) == 0.0

    @pytest.mark.parametrize(
        "points",
        [[[0.0, 1.0]], [[0.0, 1.0], [0.0, 2.0]], [[0.0, -1.0], [1.0, 1.0]]],
    )
    def test_rejects_bad_tables(self, points):
        with pytest.raises(ParameterError):
            custom_table(points)


@pytest.mark.parametrize(
    "payoff",
    [bond_payoff(), counterexample_payoff(), custom_table([[0.0, 0.2], [1.0, 0.9]])],
    ids=["bond", "counterexample", "table"],
)
def test_payoffs_nonnegative(payoff):
    assert np.all(payoff.g(np.linspace(0.0, 10.0, 101)) >= 0.0)


@pytest.mark.parametrize("x", [0.1, 0.5, 2.0])
def test_derivative_consistent_with_value(x):
    p = counterexample_payoff()
    h = 1e-4
    assert abs(float(p.g(x + h) - p.g(x)) - float(p.g_prime(x)) * h) <= 50 * h * h
