"""JSON run configuration: schema, validation and object builders.

A run configuration looks like::

    {
      "run_id": "cir-bond",
      "model": {"kind": "CIR", "params": {"a": 0.04, "b": 0.5, "sigma": 0.2}},
      "payoff": {"kind": "bond"},
      "T": 2.0,
      "evaluation_points": [[0.02, 0.0], [0.05, 1.0]],
      "engines": ["pde", "mc", "oracle"],
      "pde": {"grid": {"kind": "Uniform", "x_min": 0, "x_max": 2, "n": 400},
              "theta": 0.5, "n_time_steps": 400},
      "mc_config": {"seed": 20240611, "n_paths": 100000, "steps_per_year": 256}
    }

``T`` is the claim's maturity and each evaluation point is ``(x, t)`` with
``0 <= t <= T``.  All randomness derives from ``mc_config.seed`` through
named substreams (:func:`substream_seed`).
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .affine import AffineCoefficients, closed_form, riccati_solve
from .errors import ConfigError, ParameterError, TermStructError, UnsupportedModelError
from .models import Domain, ModelKind, ModelSpec, make_model
from .montecarlo import McConfig, Scheme
from .payoffs import Payoff, bond_payoff, call_on_bond, counterexample_payoff, custom_table
from .pde import SolverConfig, SpatialGrid, solve_tse

CHECK_NAMES = (
    "girsanov_identity",
    "boundary_residual_convergence",
    "alpha_uxx_limit",
    "wrong_boundary_divergence",
    "martingale_counterexample",
    "affine_boundary_check",
)

_NUMBER = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["model", "payoff", "T"],
    "additionalProperties": False,
    "properties": {
        "run_id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["CIR", "Dothan", "CEV", "Vasicek", "HullWhite"]},
                "params": {
                    "type": "object",
                    "additionalProperties": {
                        "oneOf": [
                            _NUMBER,
                            {"type": "array", "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}},
                        ]
                    },
                },
            },
        },
        "payoff": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["bond", "call_on_bond", "counterexample", "custom_table"]},
                "strike": {"type": "number", "exclusiveMinimum": 0},
                "bond_maturity": _NUMBER,
                "points": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                },
            },
            "additionalProperties": False,
            "allOf": [
                {
                    "if": {"properties": {"kind": {"const": "call_on_bond"}}},
                    "then": {"required": ["strike", "bond_maturity"]},
                },
                {
                    "if": {"properties": {"kind": {"const": "custom_table"}}},
                    "then": {"required": ["points"]},
                },
            ],
        },
        "T": {"type": "number", "exclusiveMinimum": 0},
        "evaluation_points": {
            "type": "array",
            "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        },
        "engines": {
            "type": "array",
            "items": {"enum": ["pde", "mc", "oracle"]},
            "uniqueItems": True,
        },
        "pde": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid": {
                    "type": "object",
                    "required": ["x_max", "n"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["Uniform", "SinhStretched"]},
                        "x_min": _NUMBER,
                        "x_max": _NUMBER,
                        "n": {"type": "integer", "minimum": 8},
                        "center": _NUMBER,
                        "strength": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "theta": {"type": "number", "minimum": 0, "maximum": 1},
                "n_time_steps": _POS_INT,
                "rannacher_steps": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "mc_config": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "n_paths": {"type": "integer", "minimum": 2},
                "steps_per_year": _POS_INT,
                "n_steps": _POS_INT,
                "scheme": {"enum": [s.value for s in Scheme]},
            },
        },
        "checks": {"type": "array", "items": {"enum": list(CHECK_NAMES)}, "uniqueItems": True},
        "ladder": {
            "type": "object",
            "required": ["levels"],
            "additionalProperties": False,
            "properties": {
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 2},
                "time_levels": {"type": "array", "items": _POS_INT, "minItems": 2},
                "x_min": _NUMBER,
                "x_max": _NUMBER,
                "theta": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return ".".join(parts + missing[:1])
    return ".".join(parts) or "<root>"


def validate_config(raw: Any) -> list[str]:
    """Schema errors as ``"field.path: message"`` strings, sorted by path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = []
    for err in validator.iter_errors(raw):
        path = _error_path(err)
        msg = "required" if err.validator == "required" else err.message
        errs.append(f"{path}: {msg}")
    return sorted(set(errs))


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return raw


def substream_seed(root: int, name: str) -> int:
    """Seed for the named substream, independent across names."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class Run:
    """A validated configuration with its model, payoff and engine settings built."""

    raw: dict
    run_id: str
    model: ModelSpec
    payoff: Payoff
    T: float
    points: list[tuple[float, float]]
    engines: list[str]
    grid: SpatialGrid
    solver: SolverConfig
    mc: McConfig | None
    checks: list[str]

    def mc_for(self, name: str) -> McConfig:
        """The MC settings with the seed of substream ``name``."""
        if self.mc is None:
            raise ConfigError(["mc_config.seed: required"])
        return replace(self.mc, seed=substream_seed(self.mc.seed, name))


def oracle_for(model: ModelSpec, maturity: float) -> AffineCoefficients | None:
    """Bond-price coefficients for bonds maturing at ``maturity``, if the model is affine."""
    if model.affine is None:
        return None
    try:
        return closed_form(model)
    except UnsupportedModelError:
        return riccati_solve(model, maturity, maturity=maturity)


def _default_grid(model: ModelSpec) -> dict:
    if model.domain is Domain.HALF_LINE:
        return {"kind": "Uniform", "x_min": 0.0, "x_max": 2.0, "n": 400}
    return {"kind": "Uniform", "x_min": -1.0, "x_max": 2.0, "n": 400}


def build_grid(block: dict, model: ModelSpec) -> SpatialGrid:
    block = {**_default_grid(model), **block}
    x_min, x_max, n = float(block["x_min"]), float(block["x_max"]), int(block["n"])
    if block.get("kind", "Uniform") == "SinhStretched":
        center = float(block.get("center", x_min))
        strength = float(block.get("strength", 0.1 * (x_max - x_min)))
        return SpatialGrid.sinh_stretched(x_min, x_max, n, center, strength)
    return SpatialGrid.uniform(x_min, x_max, n)


def _build_payoff(block: dict, model: ModelSpec, T: float, grid: SpatialGrid, solver: SolverConfig) -> Payoff:
    kind = block["kind"]
    if kind == "bond":
        return bond_payoff()
    if kind == "counterexample":
        return counterexample_payoff()
    if kind == "custom_table":
        return custom_table(block["points"])
    # call on a bond maturing at bond_maturity, observed at the option expiry T
    T1 = float(block["bond_maturity"])
    if not T1 > T:
        raise ConfigError([f"payoff.bond_maturity: must exceed T = {T:g}"])
    oracle = oracle_for(model, T1)
    if oracle is not None:
        tau = T1 - T
        return call_on_bond(
            lambda x: oracle.price(x, tau),
            block["strike"],
            bond_price_derivative=lambda x: oracle.price_x(x, tau),
            domain=model.domain,
        )
    surface = solve_tse(model, bond_payoff(), T1, grid, solver)
    j = surface.slice_index(T)
    return call_on_bond(lambda x: surface(x, surface.times[j]), block["strike"], domain=model.domain)


def build_run(raw: Any) -> Run:
    """Validate ``raw`` and build the run, raising :class:`ConfigError` with field paths."""
    errs = validate_config(raw)
    if errs:
        raise ConfigError(errs)
    errs = []
    try:
        model = make_model(ModelKind.parse(raw["model"]["kind"]), raw["model"].get("params", {}))
    except ParameterError as exc:
        raise ConfigError([f"model.params.{exc.parameter}: {exc}"]) from None
    T = float(raw["T"])
    pde = raw.get("pde", {})
    try:
        grid = build_grid(pde.get("grid", {}), model)
        grid.check_domain(model.domain)
    except (ValueError, TermStructError) as exc:
        raise ConfigError([f"pde.grid: {exc}"]) from None
    solver = SolverConfig(
        theta=float(pde.get("theta", 0.5)),
        n_time_steps=int(pde.get("n_time_steps", 400)),
        rannacher_steps=pde.get("rannacher_steps"),
    )
    points = []
    for i, (x, t) in enumerate(raw.get("evaluation_points", [])):
        if not 0.0 <= t <= T:
            errs.append(f"evaluation_points.{i}: t = {t:g} outside [0, T = {T:g}]")
        if not grid.nodes[0] <= x <= grid.nodes[-1]:
            errs.append(f"evaluation_points.{i}: x = {x:g} outside the grid [{grid.nodes[0]:g}, {grid.nodes[-1]:g}]")
        points.append((float(x), float(t)))
    mc = None
    if "mc_config" in raw:
        block = raw["mc_config"]
        mc = McConfig(
            seed=int(block["seed"]),
            n_paths=int(block.get("n_paths", 100_000)),
            steps_per_year=int(block.get("steps_per_year", 256)),
            n_steps=block.get("n_steps"),
            scheme=Scheme(block.get("scheme", Scheme.EULER_FULL_TRUNCATION.value)),
        )
    engines = list(raw.get("engines", ["pde", "oracle"] + (["mc"] if mc else [])))
    if "mc" in engines and mc is None:
        errs.append("mc_config.seed: required when the mc engine is enabled")
    if errs:
        raise ConfigError(errs)
    try:
        payoff = _build_payoff(raw["payoff"], model, T, grid, solver)
    except TermStructError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([f"payoff: {exc}"]) from None
    return Run(
        raw=raw,
        run_id=raw.get("run_id", "run"),
        model=model,
        payoff=payoff,
        T=T,
        points=points,
        engines=engines,
        grid=grid,
        solver=solver,
        mc=mc,
        checks=list(raw.get("checks", CHECK_NAMES)),
    )


def finite_or_none(value: float | None) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)
