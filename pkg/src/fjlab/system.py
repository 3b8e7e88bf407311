"""Fork-Join system description and hierarchical service-rate models."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import distributions as dist
from .errors import ConfigError, ParameterOrderError


@dataclass(frozen=True)
class Server:
    service: dist.DistributionSpec
    pi: float = 1.0  # probability the server receives a task of an arriving job

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ConfigError(f"selection probability must lie in [0, 1], got {self.pi}")

    def to_dict(self) -> dict:
        return {"service": self.service.to_dict(), "pi": self.pi}


@dataclass(frozen=True)
class FJSystemSpec:
    servers: tuple
    arrival: dist.DistributionSpec
    phi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "servers", tuple(self.servers))
        if len(self.servers) < 1:
            raise ConfigError("a Fork-Join system needs at least one server")
        if not 0.0 <= self.phi <= 1.0:
            raise ConfigError(f"scaling exponent phi must lie in [0, 1], got {self.phi}")
        if not self.arrival.mean > 0:
            raise ConfigError("inter-arrival times must have a positive mean")

    @property
    def n(self) -> int:
        return len(self.servers)

    @classmethod
    def homogeneous(cls, n: int, service, arrival, phi: float = 1.0, pi: float = 1.0):
        return cls(tuple(Server(service, pi) for _ in range(n)), arrival, phi)

    @classmethod
    def exponential(cls, rates: Sequence[float], lam: float, pis=None, phi: float = 1.0):
        pis = [1.0] * len(rates) if pis is None else list(pis)
        if len(pis) != len(rates):
            raise ConfigError("rates and selection probabilities differ in length")
        servers = tuple(Server(dist.Exponential(r), p) for r, p in zip(rates, pis))
        return cls(servers, dist.Exponential(lam), phi)

    def to_dict(self) -> dict:
        return {
            "servers": [s.to_dict() for s in self.servers],
            "arrival": self.arrival.to_dict(),
            "phi": self.phi,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FJSystemSpec":
        servers = []
        for entry in data["servers"]:
            srv = Server(dist.from_dict(entry["service"]), float(entry.get("pi", 1.0)))
            servers.extend([srv] * int(entry.get("count", 1)))
        return cls(tuple(servers), dist.from_dict(data["arrival"]), float(data.get("phi", 1.0)))


@dataclass(frozen=True)
class TwoClass:
    """Service rates take the value kappa1 w.p. ``pi`` and kappa2 otherwise."""

    kappa1: float
    kappa2: float
    pi: float

    def __post_init__(self):
        if not self.kappa1 < self.kappa2:
            raise ParameterOrderError(f"two-class model needs kappa1 < kappa2, got {self.kappa1}, {self.kappa2}")
        if not 0.0 <= self.pi <= 1.0:
            raise ConfigError("class-1 probability must lie in [0, 1]")
        if not self.kappa1 > 0:
            raise ConfigError("service rates must be positive")

    def check_arrival(self, lam: float) -> None:
        if not lam < self.kappa1:
            raise ParameterOrderError(f"two-class model needs lambda < kappa1, got {lam} >= {self.kappa1}")

    def min_mgf(self, n: int, a: float) -> float:
        """E[exp(a * min of n drawn rates)]."""
        tail = (1.0 - self.pi) ** n
        return math.exp(a * self.kappa1) - (math.exp(a * self.kappa1) - math.exp(a * self.kappa2)) * tail

    def sample_rates(self, rng: np.random.Generator, n: int) -> np.ndarray:
        slow = rng.random(n) < self.pi
        return np.where(slow, self.kappa1, self.kappa2)

    def to_dict(self) -> dict:
        return {"kind": "two_class", "kappa1": self.kappa1, "kappa2": self.kappa2, "pi": self.pi}


@dataclass(frozen=True)
class TruncatedExponential:
    """Rates with density mu0 * exp(-mu0 (x - truncation)) on x > truncation."""

    mu0: float
    truncation: float

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ConfigError("hyper-parameter mu0 must be positive")
        if not self.truncation >= 0:
            raise ConfigError("truncation point must be non-negative")

    def check_arrival(self, lam: float) -> None:
        if self.truncation < lam:
            raise ParameterOrderError("truncation point below the arrival rate allows unstable servers")

    def min_mgf(self, n: int, a: float) -> float:
        # min of n draws is truncated exponential with parameter n * mu0
        nu = n * self.mu0
        return nu / (nu - a) * math.exp(a * self.truncation)

    def sample_rates(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.truncation + rng.exponential(1.0 / self.mu0, n)

    def to_dict(self) -> dict:
        return {"kind": "truncated_exponential", "mu0": self.mu0, "truncation": self.truncation}


HierarchicalRateModel = Union[TwoClass, TruncatedExponential]


def rate_model_from_dict(data: dict, lam: float | None = None) -> HierarchicalRateModel:
    kind = data.get("kind")
    if kind == "two_class":
        return TwoClass(float(data["kappa1"]), float(data["kappa2"]), float(data["pi"]))
    if kind == "truncated_exponential":
        trunc = data.get("truncation", lam)
        if trunc is None:
            raise ConfigError("truncated_exponential needs a truncation point or an arrival rate")
        return TruncatedExponential(float(data["mu0"]), float(trunc))
    raise ConfigError(f"unknown rate model kind {kind!r}")
