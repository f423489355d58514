"""Run configuration: dataclasses, defaults, and JSON-schema validation.

One structured JSON file drives every command; CLI flags override file
values. The defaults reproduce the reference simulation setup (angle of
arrival pi/4, full angular spread, relative stopping threshold 1e-3, five
precoder iterations, entropy slack 0.05 with one extra codebook bit and
Lagrange weights in [0, 1.5]).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import jsonschema

__all__ = [
    "ExperimentConfig",
    "CellularConfig",
    "ConfigError",
    "CONFIG_SCHEMA",
    "SCHEMA_VERSION",
    "load_config",
    "validate_config",
    "default_config_dict",
    "KNOWN_SCHEMES",
    "KNOWN_RECIPES",
]

SCHEMA_VERSION = 1

KNOWN_RECIPES = ("sweep-B", "sweep-P", "sweep-N", "sweep-M", "sweep-Delta")

KNOWN_SCHEMES = (
    "ptpq-fixed", "ptpq-optimized", "ptpq-entropy", "ptpq-joint",
    "mq-fixed", "mq-optimized", "mq-entropy", "mq-joint",
    "reference-noquant",
)


class ConfigError(ValueError):
    """Configuration file or field rejected."""


def is_known_scheme(name: str) -> bool:
    if name in KNOWN_SCHEMES:
        return True
    if name.startswith("mq-successive-d"):
        tail = name[len("mq-successive-d"):]
        return tail.isdigit() and int(tail) >= 1
    return False


@dataclass
class ExperimentConfig:
    """Link-level experiment: recipe, schemes, model and loop parameters."""

    recipe: str
    schemes: list
    sweep: list
    num_rus: int = 4
    num_users: int = 1
    bits: int = 3
    power_db: float = 10.0
    gamma: float = 0.2
    alpha: list | None = None
    theta: float = math.pi / 4
    delta: float = 2 * math.pi
    precoding: str = "matched"
    design_channels: int = 200
    design_symbols: int = 500
    eval_channels: int = 500
    eval_symbols: int = 500
    omega_symbols: int = 200
    epsilon: float = 1e-3
    tau: float = 0.05
    lambda_lo: float = 0.0
    lambda_hi: float = 1.5
    r_max: int = 5
    max_design_iters: int = 40
    joint_eval_rounds: int = 2
    num_batches: int = 10
    seed: int = 0
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.recipe not in KNOWN_RECIPES:
            raise ConfigError(f"unknown recipe '{self.recipe}'; "
                              f"expected one of {KNOWN_RECIPES}")
        for s in self.schemes:
            if not is_known_scheme(s):
                raise ConfigError(f"unknown scheme '{s}'")
        if not self.schemes:
            raise ConfigError("scheme list is empty")
        if not self.sweep:
            raise ConfigError("sweep values are empty")
        if self.num_rus < 1 or self.num_users < 1:
            raise ConfigError("num_rus and num_users must be >= 1")
        if int(self.bits) < 1:
            raise ConfigError("bits must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.precoding not in ("matched", "dc"):
            raise ConfigError("precoding must be 'matched' or 'dc'")
        for name in ("design_channels", "design_symbols", "eval_channels",
                     "eval_symbols", "omega_symbols", "num_batches"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epsilon < 0 or self.tau < 0:
            raise ConfigError("epsilon and tau must be non-negative")
        if self.lambda_lo < 0 or self.lambda_hi < self.lambda_lo:
            raise ConfigError("invalid lambda bounds")
        if self.r_max < 1 or self.max_design_iters < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class CellularConfig:
    """System-level simulation over the hexagonal layout."""

    schemes: list = field(default_factory=lambda: ["mq-optimized",
                                                   "ptpq-optimized"])
    num_cells: int = 19
    picos_per_cell: int = 1
    users_per_cell: int = 4
    slots: int = 5
    drops: int = 20
    beta: float = 0.5
    fairness_alpha: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    bits_macro: int = 4
    bits_pico: int = 2
    gamma: float = 0.5
    isd_km: float = 0.5
    bandwidth_hz: float = 10e6
    reuse: int = 3
    design_channels: int = 20
    design_symbols: int = 150
    slot_symbols: int = 150
    epsilon: float = 1e-3
    r_max: int = 5
    max_design_iters: int = 25
    seed: int = 0
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.num_cells not in (7, 19):
            raise ConfigError("num_cells must be 7 (fast mode) or 19")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if any(a <= 0 for a in self.fairness_alpha):
            raise ConfigError("fairness alpha values must be positive")
        if self.slots < 1 or self.drops < 1:
            raise ConfigError("slots and drops must be >= 1")
        if self.users_per_cell < 1 or self.picos_per_cell < 0:
            raise ConfigError("invalid per-cell population")
        if self.bits_macro < 1 or self.bits_pico < 1:
            raise ConfigError("fronthaul bits must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        for s in self.schemes:
            if s not in ("mq-optimized", "ptpq-optimized",
                         "mq-fixed", "ptpq-fixed"):
                raise ConfigError(f"unknown cellular scheme '{s}'")


_NUM = {"type": "number"}
_INT = {"type": "integer"}
_STR = {"type": "string"}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "version": _INT,
        "experiment": {
            "type": "object",
            "properties": {
                "recipe": {"enum": list(KNOWN_RECIPES)},
                "schemes": {"type": "array", "items": _STR, "minItems": 1},
                "sweep": {"type": "array", "items": _NUM, "minItems": 1},
                "num_rus": _INT, "num_users": _INT, "bits": _INT,
                "power_db": _NUM, "gamma": _NUM,
                "alpha": {"type": ["array", "null"], "items": _NUM},
                "theta": _NUM, "delta": _NUM,
                "precoding": {"enum": ["matched", "dc"]},
                "design_channels": _INT, "design_symbols": _INT,
                "eval_channels": _INT, "eval_symbols": _INT,
                "omega_symbols": _INT,
                "epsilon": _NUM, "tau": _NUM,
                "lambda_lo": _NUM, "lambda_hi": _NUM,
                "r_max": _INT, "max_design_iters": _INT,
                "joint_eval_rounds": _INT, "num_batches": _INT,
                "seed": _INT, "workers": _INT, "output_dir": _STR,
            },
            "additionalProperties": False,
        },
        "cellular": {
            "type": "object",
            "properties": {
                "schemes": {"type": "array", "items": _STR, "minItems": 1},
                "num_cells": {"enum": [7, 19]},
                "picos_per_cell": _INT, "users_per_cell": _INT,
                "slots": _INT, "drops": _INT, "beta": _NUM,
                "fairness_alpha": {"type": "array", "items": _NUM},
                "bits_macro": _INT, "bits_pico": _INT, "gamma": _NUM,
                "isd_km": _NUM, "bandwidth_hz": _NUM, "reuse": _INT,
                "design_channels": _INT, "design_symbols": _INT,
                "slot_symbols": _INT,
                "epsilon": _NUM, "r_max": _INT, "max_design_iters": _INT,
                "seed": _INT, "workers": _INT, "output_dir": _STR,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def default_config_dict() -> dict:
    """Versioned defaults covering both command families."""
    exp = ExperimentConfig(recipe="sweep-B",
                           schemes=["mq-optimized", "ptpq-optimized"],
                           sweep=[1, 2, 3, 4, 5])
    cell = CellularConfig()
    return {"version": SCHEMA_VERSION,
            "experiment": asdict(exp),
            "cellular": asdict(cell)}


def validate_config(raw: dict) -> None:
    """Schema validation with field-level diagnostics."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field '{path}': {exc.message}") from exc


def load_config(path: str, overrides: dict | None = None):
    """Load, validate, and materialize configs from a JSON file.

    Returns a dict with optional 'experiment' / 'cellular' entries. Dotted
    override keys ('experiment.seed') replace file values after schema
    validation; the dataclass validators run last.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") \
                from exc
    validate_config(raw)
    raw.setdefault("version", SCHEMA_VERSION)
    if raw["version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {raw['version']}")
    if overrides:
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in ("experiment", "cellular") or not name:
                raise ConfigError(f"override '{key}' must be "
                                  "'experiment.<field>' or 'cellular.<field>'")
            raw.setdefault(section, {})[name] = value
        validate_config({k: v for k, v in raw.items()})
    out = {}
    if "experiment" in raw:
        out["experiment"] = ExperimentConfig(**raw["experiment"])
    if "cellular" in raw:
        out["cellular"] = CellularConfig(**raw["cellular"])
    return out
