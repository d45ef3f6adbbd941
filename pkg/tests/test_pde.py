import json
import math

import numpy as np
import pytest

from termstruct.affine import closed_form, riccati_solve
from termstruct.errors import DomainError, RefusedRunError, StabilityError
from termstruct.models import Domain, counterexample_model, make_model
from termstruct.payoffs import bond_payoff, call_on_bond, counterexample_payoff, custom_table
from termstruct.pde import (
    DirichletValue,
    GridKind,
    SolverConfig,
    SpatialGrid,
    alpha_uxx_diagnostic,
    boundary_residual,
    forward_weights,
    solve_tse,
    u_provider_from_surface,
    uniform_ladder,
    whole_line_lower_bound,
    wrong_boundary_solve,
)

CIR_LOW = {"a": 0.01, "b": 0.5, "sigma": 0.3}
CIR_HIGH = {"a": 0.04, "b": 0.5, "sigma": 0.2}
VASICEK = {"a": 0.05, "b": 0.3, "sigma": 0.02}
DOTHAN = {"a": 0.1, "sigma": 0.2}


@pytest.fixture(scope="module")
def cir_surface():
    m = make_model("CIR", CIR_LOW)
    return m, solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 400), SolverConfig(n_time_steps=400))


class TestGrid:
    def test_uniform_endpoints_exact(self):
        g = SpatialGrid.uniform(0.0, 2.0, 400)
        assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0 and g.n == 400

    def test_sinh_clusters_near_center(self):
        g = SpatialGrid.sinh_stretched(0.0, 2.0, 100, 0.0, 0.1)
        h = np.diff(g.nodes)
        assert g.kind is GridKind.SINH_STRETCHED
        assert h[0] < h[-1] / 5

    @pytest.mark.parametrize("nodes", [np.linspace(0, 1, 5), np.array([0, 1, 0.5, 2, 3, 4, 5, 6, 7, 8.0])])
    def test_invalid_nodes(self, nodes):
        with pytest.raises(ValueError):
            SpatialGrid(nodes)

    def test_domain_checks(self):
        with pytest.raises(DomainError):
            SpatialGrid.uniform(0.1, 2.0, 10).check_domain(Domain.HALF_LINE)
        with pytest.raises(DomainError):
            SpatialGrid.uniform(0.0, 2.0, 10).check_domain(Domain.WHOLE_LINE)

    def test_whole_line_lower_bound(self):
        x = whole_line_lower_bound(2.0, 100.0)
        assert 2.0 * math.exp(-2.0 * x) == pytest.approx(100.0)

    def test_forward_weights_exact_for_quadratics(self):
        x0, x1, x2 = 0.0, 0.1, 0.25
        w = forward_weights(x0, x1, x2)
        f = lambda x: 3 * x * x - 2 * x + 1
        assert w @ np.array([f(x0), f(x1), f(x2)]) == pytest.approx(-2.0)


class TestSolve:
    def test_terminal_slice_exact(self):
        m = make_model("CIR", CIR_LOW)
        g = custom_table([[0.0, 0.3], [0.7, 1.0], [2.0, 0.1]])
        grid = SpatialGrid.uniform(0.0, 2.0, 50)
        s = solve_tse(m, g, 1.0, grid, SolverConfig(n_time_steps=20))
        np.testing.assert_array_equal(s.values[-1], g.g(grid.nodes))

    def test_dothan_boundary_stays_at_one(self):
        m = make_model("Dothan", DOTHAN)
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 4.0, 200), SolverConfig(n_time_steps=100))
        np.testing.assert_array_equal(s.values[:, 0], 1.0)

    def test_cir_matches_oracle(self, cir_surface):
        m, s = cir_surface
        assert abs(float(s(0.05, 0.0)) - float(closed_form(m).price(0.05, 1.0))) <= 1e-4

    def test_vasicek_whole_line(self):
        m = make_model("Vasicek", VASICEK)
        s = solve_tse(m, bond_payoff(), 2.0, SpatialGrid.uniform(-1.0, 2.0, 400), SolverConfig(n_time_steps=400))
        assert abs(float(s(0.03, 0.0)) - float(closed_form(m).price(0.03, 2.0))) <= 1e-4

    def test_hull_white_matches_riccati(self):
        m = make_model("HullWhite", {"a": [[0, 0.01], [1, 0.04]], "b": 0.5, "sigma": 0.3})
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 400), SolverConfig(n_time_steps=400))
        ref = riccati_solve(m, 1.0)
        for t in (0.0, 0.5):
            assert abs(float(s(0.05, t)) - float(ref.price(0.05, 1.0 - t))) <= 1e-4

    def test_dirichlet_far_field(self):
        m = make_model("CIR", CIR_LOW)
        c = closed_form(m)
        pol = DirichletValue(lambda x, t: float(c.price(x, 1.0 - t)))
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 200), SolverConfig(far_field_policy=pol))
        err = np.max(np.abs(s.values[0] - c.price(s.grid.nodes, 1.0)))
        assert err <= 1e-5

    def test_explicit_scheme_cfl_refusal(self):
        m = make_model("CIR", CIR_LOW)
        with pytest.raises(StabilityError) as info:
            solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 200), SolverConfig(theta=0.0, n_time_steps=10))
        assert info.value.ratio > 1.0

    def test_explicit_scheme_within_cfl(self):
        m = make_model("CIR", CIR_LOW)
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 40), SolverConfig(theta=0.0, n_time_steps=400))
        assert abs(float(s(0.05, 0.0)) - float(closed_form(m).price(0.05, 1.0))) <= 1e-3

    def test_refuses_counterexample_payoff(self):
        with pytest.raises(RefusedRunError, match="not Lipschitz at x=0"):
            solve_tse(counterexample_model(), counterexample_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 50))

    def test_call_on_bond_with_startup_steps(self):
        m = make_model("CIR", CIR_HIGH)
        c = closed_form(m)
        g = call_on_bond(lambda x: c.price(x, 1.0), 0.95)
        assert SolverConfig().startup_steps(g) == 2
        s = solve_tse(m, g, 1.0, SpatialGrid.uniform(0.0, 2.0, 400))
        assert np.all(np.isfinite(s.values)) and s.values.min() >= -1e-14
        # dominated by the longer bond it is written on
        assert float(s(0.05, 0.0)) <= float(c.price(0.05, 2.0))

    @pytest.mark.parametrize("kind, params", [("CIR", {"a": 0.25, "b": 0.0, "sigma": 0.25}), ("Vasicek", VASICEK)])
    def test_fully_implicit_keeps_bump_near_far_end_nonnegative(self, kind, params):
        # drift pointing out of the grid at x_max: the far row must not extrapolate
        knots = np.linspace(0.0, 2.0, 21)
        bump = np.where(np.arange(21) == 19, 1.0, 0.0)
        grid = SpatialGrid.uniform(0.0 if kind == "CIR" else -1.0, 2.0, 100)
        s = solve_tse(make_model(kind, params), custom_table(np.column_stack([knots, bump])), 1.0, grid,
                      SolverConfig(theta=1.0, n_time_steps=50))
        assert s.values.min() >= 0.0

    def test_time_must_be_positive(self):
        with pytest.raises(ValueError):
            solve_tse(make_model("CIR", CIR_LOW), bond_payoff(), 0.0, SpatialGrid.uniform(0.0, 2.0, 20))

    def test_mismatched_grid(self):
        with pytest.raises(DomainError):
            solve_tse(make_model("Vasicek", VASICEK), bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 20))


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.theta == 0.5 and not cfg.use_monotone
        assert SolverConfig(theta=1.0).use_monotone
        assert not SolverConfig(theta=1.0, monotone=False).use_monotone

    @pytest.mark.parametrize("kwargs", [{"theta": 1.5}, {"n_time_steps": 0}, {"rannacher_steps": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)


class TestSurface:
    def test_interpolation_at_nodes(self, cir_surface):
        _, s = cir_surface
        assert float(s(s.grid.nodes[7], s.times[3])) == s.values[3, 7]

    def test_bilinear_is_reproduced(self):
        m = make_model("CIR", CIR_LOW)
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 20), SolverConfig(n_time_steps=10))
        f = lambda x, t: 1 + 2 * x + 3 * t + 4 * x * t
        object.__setattr__(s, "values", f(s.grid.nodes[None, :], s.times[:, None]))
        xc, tc = 0.5 * (s.grid.nodes[3] + s.grid.nodes[4]), 0.5 * (s.times[2] + s.times[3])
        assert float(s(xc, tc)) == pytest.approx(f(xc, tc), rel=1e-14)

    def test_outside_query(self, cir_surface):
        _, s = cir_surface
        with pytest.raises(DomainError):
            s(2.5, 0.0)
        with pytest.raises(DomainError):
            u_provider_from_surface(s)(np.array([0.1, -0.1]), 0.5)

    def test_csv_and_sidecar(self, tmp_path):
        m = make_model("CIR", CIR_LOW)
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 1.0, 10), SolverConfig(n_time_steps=4))
        s.to_csv(tmp_path / "u.csv")
        rows = (tmp_path / "u.csv").read_text().splitlines()
        assert len(rows) == 1 + 5 and rows[0].startswith("t\\x,0,")
        s.write_sidecar(tmp_path / "u.json", {"note": 1})
        meta = json.loads((tmp_path / "u.json").read_text())
        assert meta["boundary"] == "natural" and meta["diagnostics"] == {"note": 1}


class TestDiagnostics:
    def test_dothan_residual_vanishes(self):
        m = make_model("Dothan", DOTHAN)
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 4.0, 100), SolverConfig(n_time_steps=100))
        assert boundary_residual(s, m).max_norm <= 1e-10
        assert np.max(np.abs(alpha_uxx_diagnostic(s, m, 0.5).values)) <= 1e-3

    @pytest.mark.parametrize("params", [CIR_LOW, CIR_HIGH])
    def test_cir_residual_converges(self, params):
        m = make_model("CIR", params)
        norms = [boundary_residual(s, m).max_norm for s in uniform_ladder(m, bond_payoff(), 1.0, 0.0, 2.0, [50, 100, 200])]
        assert norms[0] / norms[1] >= 1.8 and norms[1] / norms[2] >= 1.8

    def test_alpha_uxx_profile(self, cir_surface):
        m, s = cir_surface
        prof = alpha_uxx_diagnostic(s, m, 0.5)
        assert prof.x.size == 10 and prof.x[0] == s.grid.nodes[1]
        assert abs(prof.innermost) <= 1e-3

    def test_alpha_uxx_needs_interior_slice(self, cir_surface):
        m, s = cir_surface
        with pytest.raises(ValueError):
            alpha_uxx_diagnostic(s, m, 1.0)

    def test_whole_line_diagnostics_rejected(self):
        m = make_model("Vasicek", VASICEK)
        s = solve_tse(m, bond_payoff(), 1.0, SpatialGrid.uniform(-1.0, 1.0, 20), SolverConfig(n_time_steps=10))
        with pytest.raises(DomainError):
            boundary_residual(s, m)
        with pytest.raises(DomainError):
            alpha_uxx_diagnostic(s, m, 0.5)


class TestWrongBoundary:
    def test_pinned_value_diverges(self):
        m = make_model("CIR", CIR_LOW)
        c = closed_form(m)
        grid = SpatialGrid.uniform(0.0, 2.0, 200)
        right = solve_tse(m, bond_payoff(), 1.0, grid)
        wrong = wrong_boundary_solve(m, bond_payoff(), 1.0, grid, None, lambda t: 0.5)
        exact = float(c.price(0.05, 1.0))
        assert abs(float(wrong(0.05, 0.0)) - exact) >= 10 * abs(float(right(0.05, 0.0)) - exact)

    def test_oracle_boundary_data_recovers_price(self):
        m = make_model("CIR", CIR_LOW)
        c = closed_form(m)
        s = wrong_boundary_solve(m, bond_payoff(), 1.0, SpatialGrid.uniform(0.0, 2.0, 200), None,
                                 lambda t: float(c.price(0.0, 1.0 - t)))
        assert abs(float(s(0.05, 0.0)) - float(c.price(0.05, 1.0))) <= 1e-5
        assert s.boundary == "dirichlet"

    def test_residual_does_not_vanish(self):
        m = make_model("CIR", CIR_LOW)
        norms = [
            boundary_residual(wrong_boundary_solve(m, bond_payoff(), 1.0, SpatialGrid.uniform(0, 2, n),
                                                   SolverConfig(n_time_steps=n), lambda t: 0.5), m).max_norm
            for n in (50, 100)
        ]
        assert norms[1] >= norms[0] > 0.1

    @pytest.mark.parametrize(
        "kind, params",
        [("CIR", {"a": 0.10, "b": 0.5, "sigma": 0.3}), ("Dothan", DOTHAN)],
    )
    def test_refusal(self, kind, params):
        with pytest.raises(RefusedRunError):
            wrong_boundary_solve(make_model(kind, params), bond_payoff(), 1.0, SpatialGrid.uniform(0, 2, 20), None,
                                 lambda t: 0.5)
