"""Experiment configuration: schema, validation and defaults."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema
import yaml

MECHANISMS_COUNT = ("G", "non-thre", "TMDP", "MIN", "Sample", "PLDP", "non-pri")
MECHANISMS_LINREG = ("G", "non-thre", "TMDP", "MIN", "Sample", "PLDP", "non-pri")

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tpmdp experiment config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "query": {"enum": ["count", "linreg"]},
        "n": {"type": "integer", "minimum": 2},
        "t": {
            "description": "integer threshold, or a float in [0, 1) read as floor(t * n)",
            "oneOf": [
                {"type": "integer", "minimum": 0},
                {"type": "number", "minimum": 0, "exclusiveMaximum": 1, "not": {"type": "integer"}},
            ],
        },
        "rho": {"type": "number", "minimum": 0, "maximum": 1},
        "f_C": {"type": "number", "minimum": 0, "maximum": 1},
        "f_M": {"type": "number", "minimum": 0, "maximum": 1},
        "eps_C": {"type": "number", "exclusiveMinimum": 0},
        "eps_M": {"type": "number", "exclusiveMinimum": 0},
        "eps_L": {"type": "number", "exclusiveMinimum": 0},
        "delta": {
            "description": "'1/(10n)' or a fixed value in (0, 1)",
            "oneOf": [{"const": "1/(10n)"}, {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}],
        },
        "active": {
            "description": "'all', 'random' (uniform random non-empty subset), 'random:K', or 1-based party list",
            "oneOf": [
                {"type": "string", "pattern": r"^(all|random|random:[0-9]+)$"},
                {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            ],
        },
        "repetitions": {"type": "integer", "minimum": 1},
        "folds": {"type": "integer", "minimum": 2},
        "features": {"type": "integer", "minimum": 1},
        "label_noise": {"type": "number", "minimum": 0},
        "mechanisms": {"type": "array", "items": {"enum": list(MECHANISMS_COUNT)}, "minItems": 1},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": ["string", "null"]},
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    query: str = "count"
    n: int | None = None  # defaults: 1000 for count, 50000 for linreg
    t: int | float = 0.5
    rho: float = 0.15
    f_C: float = 0.54
    f_M: float = 0.37
    eps_C: float = 0.01
    eps_M: float = 0.2
    eps_L: float = 1.0
    delta: str | float = "1/(10n)"
    active: str | tuple[int, ...] = "random"
    repetitions: int | None = None  # defaults: 100 for count, 20 for linreg
    folds: int = 5
    features: int = 4
    label_noise: float = 0.05
    mechanisms: tuple[str, ...] | None = None
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.f_C + self.f_M > 1 + 1e-12:
            raise ConfigError(f"f_C + f_M must be <= 1, got {self.f_C + self.f_M}")
        if not self.eps_C <= self.eps_M <= self.eps_L:
            raise ConfigError("need eps_C <= eps_M <= eps_L")
        if isinstance(self.active, list):
            object.__setattr__(self, "active", tuple(self.active))
        if isinstance(self.mechanisms, list):
            object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if self.t_abs >= self.n_parties:
            raise ConfigError(f"t resolves to {self.t_abs}, which must be < n = {self.n_parties}")
        if isinstance(self.active, tuple) and max(self.active) > self.n_parties:
            raise ConfigError("active party index exceeds n")
        if isinstance(self.active, str) and self.active.startswith("random:"):
            k = int(self.active.split(":")[1])
            if not 1 <= k <= self.n_parties:
                raise ConfigError(f"random:K needs 1 <= K <= n, got {k}")

    @property
    def n_parties(self) -> int:
        if self.n is not None:
            return self.n
        return 1000 if self.query == "count" else 50_000

    @property
    def t_abs(self) -> int:
        if isinstance(self.t, float):
            return math.floor(self.t * self.n_parties)
        return int(self.t)

    @property
    def n_repetitions(self) -> int:
        if self.repetitions is not None:
            return self.repetitions
        return 100 if self.query == "count" else 20

    @property
    def delta_value(self) -> float:
        if self.delta == "1/(10n)":
            return 1.0 / (10 * self.n_parties)
        return float(self.delta)

    @property
    def mechanism_list(self) -> tuple[str, ...]:
        if self.mechanisms is not None:
            return self.mechanisms
        return MECHANISMS_COUNT if self.query == "count" else MECHANISMS_LINREG

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for key in ("active", "mechanisms"):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return {k: v for k, v in d.items() if v is not None}


def validate_config_dict(raw: Any) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def config_from_dict(raw: Any) -> ExperimentConfig:
    validate_config_dict(raw if raw is not None else {})
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in (raw or {}).items() if k in known})


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML (or JSON) key-value document; unknown keys are errors."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw)
