"""Single-factor short-rate pricing: PDE solver, Monte Carlo engine and affine oracles."""

from .affine import AffineCoefficients, cir_affine, closed_form, riccati_solve, vasicek_affine
from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    ParameterError,
    RefusedRunError,
    StabilityError,
    TermStructError,
    UnsupportedModelError,
)
from .models import Domain, ModelKind, ModelSpec, counterexample_model, custom_model, make_model, validate_hypothesis
from .montecarlo import (
    McConfig,
    McEstimate,
    Scheme,
    girsanov_gap,
    mc_convergence_table,
    price_u,
    price_ux_firstvariation,
    price_v,
    simulate_first_variation,
    simulate_paths,
)
from .payoffs import Payoff, bond_payoff, call_on_bond, counterexample_payoff, custom_table
from .pde import (
    SolutionSurface,
    SolverConfig,
    SpatialGrid,
    alpha_uxx_diagnostic,
    boundary_residual,
    solve_tse,
    u_provider_from_surface,
    wrong_boundary_solve,
)

__all__ = [name for name in dir() if not name.startswith("_")]
