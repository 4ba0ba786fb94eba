"""Experiment configuration: JSON with a versioned schema."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .coefficients import PRESETS
from .domain import domain_from_config
from .rng import DEFAULT_SEED

SCHEMA_VERSION = 1
KINDS = ("gradient", "survival", "metrics", "ddsde", "bound-scan", "oracle", "validate")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _positive(value, name: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if not value > 0:
        raise ConfigError(f"{name}: must be positive, got {value!r}")
    return int(value) if integer else float(value)


@dataclass
class ExperimentConfig:
    kind: str
    domain: dict
    coefficients: dict = field(default_factory=lambda: {"preset": "constant", "params": {}})
    grid: dict = field(default_factory=lambda: {"dt": 1e-3, "horizon": 1.0})
    paths: int = 10_000
    seed: int = DEFAULT_SEED
    bridge: bool = True
    threads: int = 1
    output: str = "out"
    params: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported version {self.schema_version!r} (expected {SCHEMA_VERSION})")
        if self.kind not in KINDS:
            raise ConfigError(f"kind: unknown experiment {self.kind!r}; choose from {', '.join(KINDS)}")
        if not isinstance(self.domain, dict):
            raise ConfigError("domain: expected an object")
        try:
            domain_from_config(self.domain)
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("domain") else f"domain: {msg}") from exc
        if not isinstance(self.coefficients, dict) or "preset" not in self.coefficients:
            raise ConfigError("coefficients.preset: missing")
        if self.coefficients["preset"] not in PRESETS:
            raise ConfigError(f"coefficients.preset: unknown preset {self.coefficients['preset']!r}")
        if not isinstance(self.coefficients.get("params", {}), dict):
            raise ConfigError("coefficients.params: expected an object")
        for key in ("dt", "horizon"):
            if key not in self.grid:
                raise ConfigError(f"grid.{key}: missing")
            _positive(self.grid[key], f"grid.{key}")
        steps = round(self.grid["horizon"] / self.grid["dt"])
        if abs(steps * self.grid["dt"] - self.grid["horizon"]) > 1e-9 * self.grid["horizon"]:
            raise ConfigError("grid.horizon: not an integer multiple of grid.dt")
        self.paths = _positive(self.paths, "paths", integer=True)
        self.threads = _positive(self.threads, "threads", integer=True)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: expected a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.bridge, bool):
            raise ConfigError("bridge: expected true or false")
        if not isinstance(self.params, dict):
            raise ConfigError("params: expected an object")

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "kind": self.kind, "domain": copy.deepcopy(self.domain),
                "coefficients": copy.deepcopy(self.coefficients), "grid": dict(self.grid), "paths": self.paths,
                "seed": self.seed, "bridge": self.bridge, "threads": self.threads, "output": self.output,
                "params": copy.deepcopy(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        known = {"schema_version", "kind", "domain", "coefficients", "grid", "paths", "seed", "bridge", "threads",
                 "output", "params"}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"{extra[0]}: unknown field")
        for key in ("kind", "domain"):
            if key not in data:
                raise ConfigError(f"{key}: missing")
        return cls(**copy.deepcopy(data))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        data = self.to_dict()
        for key, value in changes.items():
            if value is None:
                continue
            if "." in key:
                head, tail = key.split(".", 1)
                data.setdefault(head, {})[tail] = value
            else:
                data[key] = value
        return ExperimentConfig.from_dict(data)
