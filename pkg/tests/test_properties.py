"""Property tests over randomly drawn parameters and payoffs."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from termstruct.affine import cir_affine, riccati_solve, vasicek_affine
from termstruct.models import make_model
from termstruct.montecarlo import McConfig, McEstimate, merge_estimates, price_u, simulate_paths
from termstruct.payoffs import bond_payoff, call_on_bond, custom_table
from termstruct.pde import SolverConfig, SpatialGrid, solve_tse

PROPS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])

cir_params = st.fixed_dictionaries(
    {
        "a": st.floats(0.0, 0.3),
        "b": st.floats(-0.2, 1.5),
        "sigma": st.floats(0.05, 0.6),
    }
)
half_line_models = st.one_of(
    cir_params.map(lambda p: ("CIR", p)),
    st.fixed_dictionaries({"a": st.floats(-0.2, 0.3), "sigma": st.floats(0.05, 0.5)}).map(lambda p: ("Dothan", p)),
    st.fixed_dictionaries(
        {
            "a": st.floats(0.0, 1.0),
            "b": st.floats(0.0, 0.1),
            "sigma": st.floats(0.05, 0.5),
            "gamma": st.floats(0.55, 1.0),
        }
    ).map(lambda p: ("CEV", p)),
)
table_values = st.lists(st.floats(0.0, 1.0), min_size=21, max_size=21)


def _table(values):
    return custom_table(np.column_stack([np.linspace(0.0, 2.0, len(values)), values]))


class TestPdeOrder:
    @PROPS
    @given(params=cir_params, base=table_values, bump=table_values)
    def test_comparison_principle_theta_one(self, params, base, bump):
        m = make_model("CIR", params)
        g1 = np.asarray(base)
        g2 = g1 + np.asarray(bump)
        grid = SpatialGrid.uniform(0.0, 2.0, 100)
        cfg = SolverConfig(theta=1.0, n_time_steps=50)
        u1 = solve_tse(m, _table(g1), 1.0, grid, cfg).values
        u2 = solve_tse(m, _table(g2), 1.0, grid, cfg).values
        assert np.min(u2 - u1) >= -1e-12

    @PROPS
    @given(
        params=st.fixed_dictionaries(
            {"a": st.floats(-0.5, 0.5), "b": st.floats(0.01, 1.5), "sigma": st.floats(0.005, 0.5)}
        ),
        base=table_values,
        bump=table_values,
    )
    def test_comparison_principle_whole_line(self, params, base, bump):
        m = make_model("Vasicek", params)
        g1 = np.asarray(base)
        g2 = g1 + np.asarray(bump)
        grid = SpatialGrid.uniform(-1.0, 2.0, 120)
        cfg = SolverConfig(theta=1.0, n_time_steps=50)
        u1 = solve_tse(m, _table(g1), 1.0, grid, cfg).values
        u2 = solve_tse(m, _table(g2), 1.0, grid, cfg).values
        assert np.min(u2 - u1) >= -1e-12

    @PROPS
    @given(model=half_line_models, T=st.floats(0.1, 3.0))
    def test_bond_bounds_theta_one(self, model, T):
        m = make_model(*model)
        s = solve_tse(m, bond_payoff(), T, SpatialGrid.uniform(0.0, 3.0, 120), SolverConfig(theta=1.0, n_time_steps=60))
        assert s.values.min() >= 0.0
        assert s.values.max() <= 1.0

    @PROPS
    @given(params=cir_params, values=table_values, theta=st.sampled_from([0.5, 1.0]))
    def test_terminal_exactness(self, params, values, theta):
        g = _table(values)
        grid = SpatialGrid.uniform(0.0, 2.0, 40)
        s = solve_tse(make_model("CIR", params), g, 1.0, grid, SolverConfig(theta=theta, n_time_steps=10))
        np.testing.assert_array_equal(s.values[-1], g.g(grid.nodes))


class TestAffine:
    @PROPS
    @given(params=cir_params)
    def test_cir_closed_form_vs_rk4(self, params):
        m = make_model("CIR", params)
        taus = np.linspace(0.0, 5.0, 11)
        num = riccati_solve(m, 5.0)
        ref = cir_affine(params)
        A0, B0 = ref.coefficients(taus)
        A1, B1 = num.coefficients(taus)
        assert A0[0] == 1.0 and B0[0] == 0.0
        assert np.all(B0 >= 0.0)
        assert np.max(np.abs(A0 - A1)) <= 1e-10 and np.max(np.abs(B0 - B1)) <= 1e-10

    @PROPS
    @given(a=st.floats(-0.1, 0.2), b=st.floats(0.05, 2.0), sigma=st.floats(0.001, 0.1))
    def test_vasicek_closed_form_vs_rk4(self, a, b, sigma):
        m = make_model("Vasicek", {"a": a, "b": b, "sigma": sigma})
        taus = np.linspace(0.0, 5.0, 11)
        ref = vasicek_affine(m.params)
        num = riccati_solve(m, 5.0)
        assert np.max(np.abs(ref.coefficients(taus)[0] - num.coefficients(taus)[0])) <= 1e-10

    @PROPS
    @given(params=cir_params, tau=st.floats(0.01, 10.0))
    def test_cir_price_decreasing_in_rate(self, params, tau):
        p = cir_affine(params).price(np.linspace(0.0, 3.0, 13), tau)
        assert np.all(np.diff(p) < 0)


class TestPayoffs:
    @PROPS
    @given(params=cir_params, tau=st.floats(0.1, 5.0), strike=st.floats(0.05, 1.2))
    def test_call_nonnegative_and_monotone(self, params, tau, strike):
        c = cir_affine(params)
        g = call_on_bond(lambda x: c.price(x, tau), strike).g(np.linspace(0.0, 3.0, 61))
        assert np.all(g >= 0.0)
        assert np.all(np.diff(g) <= 0.0)


class TestMonteCarlo:
    @settings(max_examples=15, deadline=None)
    @given(params=cir_params, x=st.floats(0.0, 0.2), seed=st.integers(0, 2**32 - 1))
    def test_half_line_paths_nonnegative(self, params, x, seed):
        batch = simulate_paths(make_model("CIR", params), x, 0.0, 1.0, 200, 64, seed)
        assert batch.values.min() >= 0.0
        assert np.all(batch.values[:, 0] == x)

    @settings(max_examples=10, deadline=None)
    @given(params=cir_params, seed=st.integers(0, 2**32 - 1))
    def test_seed_determinism(self, params, seed):
        m = make_model("CIR", params)
        cfg = McConfig(seed=seed, n_paths=500, n_steps=16)
        a = price_u(m, bond_payoff(), 0.05, 0.0, 1.0, cfg)
        b = price_u(m, bond_payoff(), 0.05, 0.0, 1.0, cfg)
        assert a == b

    @settings(max_examples=10, deadline=None)
    @given(params=cir_params, x=st.floats(0.0, 0.2), seed=st.integers(0, 2**32 - 1))
    def test_pathwise_monotone_discount(self, params, x, seed):
        m = make_model("CIR", params)
        cfg = McConfig(seed=seed, n_paths=500, n_steps=32)
        lo = price_u(m, bond_payoff(), x, 0.0, 1.0, cfg)
        hi = price_u(m, bond_payoff(), x + 0.05, 0.0, 1.0, cfg)
        assert hi.value <= lo.value

    @PROPS
    @given(
        a=st.lists(st.floats(-10, 10), min_size=2, max_size=40),
        b=st.lists(st.floats(-10, 10), min_size=2, max_size=40),
    )
    def test_merge_equals_pooled(self, a, b):
        merged = merge_estimates(McEstimate.from_samples(np.array(a), 1), McEstimate.from_samples(np.array(b), 1))
        pooled = McEstimate.from_samples(np.array(a + b), 1)
        assert merged.value == pytest.approx(pooled.value, abs=1e-9)
        assert merged.std_error == pytest.approx(pooled.std_error, abs=1e-9)
