"""Experiment configs: JSON schema validation, object construction and canonical echo."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import jsonschema
import numpy as np

from . import strategies
from .errors import ConfigError
from .system import FJSystemSpec, rate_model_from_dict

SCHEMA_VERSION = 1

SIMULATION_DEFAULTS = {
    "n_jobs": 100_000,
    "replications": 1,
    "strategy_mode": "per_run",
    "batches": 10,
    "allocation": "proportional",
    "min_stratum_jobs": 2000,
    "dump_samples": False,
}


def load_schema() -> dict:
    text = resources.files("fjlab").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def validate(data: dict) -> None:
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: dict) -> str:
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:16]


def sigma_grid(spec) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if spec["stop"] < spec["start"]:
        raise ConfigError("sigma grid needs stop >= start")
    return np.linspace(spec["start"], spec["stop"], spec["num"])


@dataclass
class ExperimentConfig:
    data: dict  # normalised, schema-valid dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        validate(raw)
        data = copy.deepcopy(raw)
        data.setdefault("seed", 0)
        if "simulation" in data:
            data["simulation"] = {**SIMULATION_DEFAULTS, **data["simulation"]}
        cfg = cls(data)
        cfg.build()  # surfaces semantic errors at load time
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(raw)

    def echo(self) -> dict:
        return copy.deepcopy(self.data)

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return ExperimentConfig.from_dict(data)

    # object construction
    def build(self) -> None:
        d = self.data
        self.system = FJSystemSpec.from_dict(d["system"]) if "system" in d else None
        self.strategy = strategies.from_dict(d["strategy"]) if "strategy" in d else None
        self.rate_model = None
        if "rate_model" in d:
            lam = self.arrival_rate if self.system is not None else None
            self.rate_model = rate_model_from_dict(d["rate_model"], lam)
        self.sigmas = sigma_grid(d["sigmas"]) if "sigmas" in d else None
        if self.strategy is not None and self.system is not None and self.rate_model is None:
            if self.strategy.n > self.system.n:
                raise ConfigError(f"strategy uses up to {self.strategy.n} servers but the system has {self.system.n}")

    @property
    def arrival_rate(self) -> float:
        if self.system is None:
            raise ConfigError("config has no system")
        return 1.0 / self.system.arrival.mean

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if k not in self.data]
        if missing:
            raise ConfigError(f"config is missing required section(s): {', '.join(missing)}")
