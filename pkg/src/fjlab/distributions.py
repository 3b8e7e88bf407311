"""Parametric service / inter-arrival distributions with exact transforms.

Every distribution exposes ``mean``, ``log_mgf``/``mgf`` (E[e^{theta X}]),
``laplace`` (E[e^{-theta X}]), the upper end of the MGF domain and a
vectorised sampler that takes an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, DomainError

# below this |theta * width| the uniform MGF switches to its Taylor series
_UNIFORM_TAYLOR_CUTOFF = 1e-6


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox stream for ``seed`` and an optional spawn key.

    Distinct keys give statistically independent streams, so parallel
    replications can be seeded as ``make_rng(seed, rep, stratum)``.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _log_expm1_ratio(t: float) -> float:
    """log((e^t - 1) / t), stable for all real t."""
    if abs(t) < _UNIFORM_TAYLOR_CUTOFF:
        return math.log1p(t / 2.0 + t * t / 6.0 + t ** 3 / 24.0)
    if t > 30.0:
        return t + math.log1p(-math.exp(-t)) - math.log(t)
    return math.log(math.expm1(t) / t)


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"exponential rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def mgf_upper(self) -> float:
        return self.rate

    def log_mgf(self, theta: float) -> float:
        if theta >= self.rate:
            raise DomainError(f"exponential MGF undefined for theta={theta} >= rate={self.rate}")
        return math.log(self.rate) - math.log(self.rate - theta)

    def mgf(self, theta: float) -> float:
        if theta >= self.rate:
            raise DomainError(f"exponential MGF undefined for theta={theta} >= rate={self.rate}")
        return self.rate / (self.rate - theta)

    def laplace(self, theta: float) -> float:
        return self.rate / (self.rate + theta)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def to_dict(self) -> dict:
        return {"kind": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class UniformInterval:
    low: float
    high: float

    def __post_init__(self):
        if not (self.low >= 0 and self.high > self.low and math.isfinite(self.high)):
            raise ConfigError(f"uniform interval needs 0 <= low < high, got [{self.low}, {self.high}]")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def mgf_upper(self) -> float:
        return math.inf

    def log_mgf(self, theta: float) -> float:
        return theta * self.low + _log_expm1_ratio(theta * (self.high - self.low))

    def mgf(self, theta: float) -> float:
        width = self.high - self.low
        t = theta * width
        if abs(t) < _UNIFORM_TAYLOR_CUTOFF:
            return math.exp(theta * self.low) * (1.0 + t / 2.0 + t * t / 6.0 + t ** 3 / 24.0)
        return math.exp(self.log_mgf(theta))

    def laplace(self, theta: float) -> float:
        return self.mgf(-theta)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.low, self.high, size)

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class Deterministic:
    value: float

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ConfigError(f"deterministic value must be finite and >= 0, got {self.value}")

    @property
    def mean(self) -> float:
        return self.value

    @property
    def mgf_upper(self) -> float:
        return math.inf

    def log_mgf(self, theta: float) -> float:
        return theta * self.value

    def mgf(self, theta: float) -> float:
        return math.exp(theta * self.value)

    def laplace(self, theta: float) -> float:
        return math.exp(-theta * self.value)

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "deterministic", "value": self.value}


DistributionSpec = Union[Exponential, UniformInterval, Deterministic]


@dataclass(frozen=True)
class TransformedDistribution:
    """``base / scale_divisor`` kept with probability ``thin_probability``, else 0.

    The MGF is ``(1 - pi) + pi * mgf_base(theta / scale_divisor)``.
    """

    base: DistributionSpec
    scale_divisor: float = 1.0
    thin_probability: float = 1.0

    def __post_init__(self):
        if not self.scale_divisor > 0:
            raise ConfigError("scale_divisor must be positive")
        if not 0.0 <= self.thin_probability <= 1.0:
            raise ConfigError("thin_probability must lie in [0, 1]")

    @property
    def mean(self) -> float:
        return self.thin_probability * self.base.mean / self.scale_divisor

    @property
    def mgf_upper(self) -> float:
        if self.thin_probability == 0.0:
            return math.inf
        return self.base.mgf_upper * self.scale_divisor

    def mgf(self, theta: float) -> float:
        pi = self.thin_probability
        if pi == 0.0:
            return 1.0
        inner = self.base.mgf(theta / self.scale_divisor)
        return (1.0 - pi) + pi * inner

    def log_mgf(self, theta: float) -> float:
        pi = self.thin_probability
        if pi == 0.0:
            return 0.0
        inner = self.base.log_mgf(theta / self.scale_divisor)
        if pi == 1.0:
            return inner
        # log((1-pi) + pi e^inner) without overflow for large inner
        return float(np.logaddexp(math.log1p(-pi), math.log(pi) + inner))

    def laplace(self, theta: float) -> float:
        pi = self.thin_probability
        return (1.0 - pi) + pi * self.base.laplace(theta / self.scale_divisor)

    def sample(self, rng: np.random.Generator, size=None):
        x = np.asarray(self.base.sample(rng, size), dtype=float) / self.scale_divisor
        if self.thin_probability < 1.0:
            keep = rng.random(size) < self.thin_probability
            x = np.where(keep, x, 0.0)
        return float(x) if size is None else x

    def to_dict(self) -> dict:
        return {
            "kind": "transformed",
            "base": self.base.to_dict(),
            "scale_divisor": self.scale_divisor,
            "thin_probability": self.thin_probability,
        }


AnyDistribution = Union[Exponential, UniformInterval, Deterministic, TransformedDistribution]


def scale(d: AnyDistribution, s: float, phi: float) -> TransformedDistribution:
    """Service time of one task when a job is split over ``s`` servers: X / s^phi."""
    if isinstance(d, TransformedDistribution):
        return TransformedDistribution(d.base, d.scale_divisor * s ** phi, d.thin_probability)
    return TransformedDistribution(d, s ** phi, 1.0)


def thin(d: AnyDistribution, pi: float) -> TransformedDistribution:
    if isinstance(d, TransformedDistribution):
        return TransformedDistribution(d.base, d.scale_divisor, d.thin_probability * pi)
    return TransformedDistribution(d, 1.0, pi)


def mgf(d: AnyDistribution, theta: float) -> float:
    return d.mgf(theta)


def laplace(d: AnyDistribution, theta: float) -> float:
    if theta < 0:
        raise DomainError("laplace transform is evaluated for theta >= 0 only")
    return d.laplace(theta)


def sample(d: AnyDistribution, rng: np.random.Generator, size=None):
    return d.sample(rng, size)


def from_dict(data: dict) -> AnyDistribution:
    kind = data.get("kind")
    try:
        if kind == "exponential":
            return Exponential(float(data["rate"]))
        if kind == "uniform":
            return UniformInterval(float(data["low"]), float(data["high"]))
        if kind == "deterministic":
            return Deterministic(float(data["value"]))
        if kind == "transformed":
            return TransformedDistribution(
                from_dict(data["base"]),
                float(data.get("scale_divisor", 1.0)),
                float(data.get("thin_probability", 1.0)),
            )
    except KeyError as exc:
        raise ConfigError(f"distribution {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown distribution kind {kind!r}")
