"""JSON run configuration: schema, defaults and object construction.

Example::

    {
      "model": {"a": 0.15, "sigma": 0.3, "c": 1.0, "lambda": 2.0},
      "jumps": {"type": "exponential", "rate": 1.0},
      "grid": {"u_max": 20, "n": 400, "stretch": 4},
      "solver": {"method": "direct", "tol": 1e-10},
      "sim": {"dt": 0.001, "n_paths": 100000, "t_max": 200, "barrier": "auto", "seed": 7}
    }

Every block except ``model`` and ``jumps`` is optional; unknown keys are
rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema

from .model import JumpDistribution, ModelParams, make_empirical, make_exponential, make_gamma
from .simulator import SimConfig
from .solver import GridSpec, SolverConfig


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}


def _block(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _block({
    "model": _block({"a": _num, "sigma": _num, "c": _num, "lambda": _num},
                    ["a", "sigma", "c", "lambda"]),
    "jumps": {"oneOf": [
        _block({"type": {"const": "exponential"}, "rate": _num}, ["type", "rate"]),
        _block({"type": {"const": "gamma"}, "shape": _num, "scale": _num},
               ["type", "shape", "scale"]),
        _block({"type": {"const": "empirical"},
                "points": {"type": "array", "minItems": 1,
                           "items": {"type": "array", "items": _num,
                                     "minItems": 2, "maxItems": 2}}},
               ["type", "points"]),
    ]},
    "grid": _block({"u_max": _pos, "n": {"type": "integer", "minimum": 8},
                    "stretch": {"type": "number", "minimum": 1}}),
    "solver": _block({"method": {"enum": ["direct", "picard"]}, "tol": _pos,
                      "max_iter": _posint, "umax_factor": _pos, "umax_tol": _pos,
                      "max_extensions": _posint,
                      "scheme": {"enum": ["central", "upwind-auto"]}}),
    "sim": _block({"dt": _pos, "n_paths": _posint, "t_max": _pos,
                   "barrier": {"oneOf": [_pos, {"const": "auto"}]},
                   "barrier_level": _pos,
                   "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                   "bridge_correction": {"type": "boolean"}}),
    "validation": _block({
        "u_list": {"type": "array", "items": _pos, "minItems": 1},
        "allowance": {"type": "number", "minimum": 0},
        "dpp_u": _pos, "dpp_t": {"type": "number", "minimum": 0}, "dpp_paths": _posint,
        "lemma1_samples": _posint, "comparison_trials": _posint,
        "uniqueness_starts": {"type": "integer", "minimum": 2},
        "picard_max_iter": _posint,
    }),
    "convergence": _block({
        "test_function": {"enum": ["exp", "one"]},
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 8}},
        "u_max": _pos,
        "probe": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
        "scheme": {"enum": ["central", "upwind-auto"]},
    }),
    "output": _block({"csv": {"type": "string"}, "json": {"type": "string"},
                      "paths_csv": {"type": "string"}}),
}, ["model", "jumps"])


@dataclass(frozen=True)
class ValidationSettings:
    u_list: tuple = (0.5, 1.0, 2.0, 5.0)
    allowance: float = 0.01
    dpp_u: float = 2.0
    dpp_t: float = 1.0
    dpp_paths: int = 100_000
    lemma1_samples: int = 10_000
    comparison_trials: int = 100
    uniqueness_starts: int = 3
    picard_max_iter: int = 5000


@dataclass(frozen=True)
class ConvergenceSettings:
    test_function: str = "exp"
    n_list: tuple = (100, 200, 400)
    u_max: float = 10.0
    probe: tuple = (1.0, 5.0)
    scheme: str = "upwind-auto"


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    dist: JumpDistribution
    grid: GridSpec = GridSpec()
    solver: SolverConfig = SolverConfig()
    sim: SimConfig = SimConfig(n_paths=100_000)
    barrier_auto: bool = True
    barrier_level: float = 1e-3
    validation: ValidationSettings = ValidationSettings()
    convergence: ConvergenceSettings = ConvergenceSettings()
    output: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, sim=replace(self.sim, seed=seed))


def build_dist(block: dict) -> JumpDistribution:
    kind = block["type"]
    if kind == "exponential":
        return make_exponential(block["rate"])
    if kind == "gamma":
        return make_gamma(block["shape"], block["scale"])
    return make_empirical([tuple(p) for p in block["points"]])


def parse_config(raw: dict) -> RunConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    m = raw["model"]
    try:
        params = ModelParams(m["a"], m["sigma"], m["c"], m["lambda"])
        dist = build_dist(raw["jumps"])
        grid = GridSpec(**raw.get("grid", {}))
        solver = SolverConfig(**raw.get("solver", {}))
        sim_block = dict(raw.get("sim", {}))
        barrier = sim_block.pop("barrier", "auto")
        level = sim_block.pop("barrier_level", 1e-3)
        sim = SimConfig(**{"n_paths": 100_000, **sim_block},
                        barrier=math.inf if barrier == "auto" else barrier)
        val = dict(raw.get("validation", {}))
        if "u_list" in val:
            val["u_list"] = tuple(val["u_list"])
        validation = ValidationSettings(**val)
        conv = dict(raw.get("convergence", {}))
        for k in ("n_list", "probe"):
            if k in conv:
                conv[k] = tuple(conv[k])
        convergence = ConvergenceSettings(**conv)
    except ValueError as exc:  # ModelError, GridError and dataclass checks
        raise ConfigError(str(exc)) from None
    return RunConfig(params, dist, grid, solver, sim, barrier == "auto", level,
                     validation, convergence, dict(raw.get("output", {})))


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(raw)
