"""Scheduling strategies: distributions of the number S of servers a job is split over.

Each strategy lives on {1..N} and provides its pmf, E[S] and the exponential
moments E[S^r e^{-aS}] (r = 1, 2) that the tail bounds are built from.
Closed forms are used where they exist; everything else is summed exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from .errors import ConfigError, DivergenceError, RangeError


def _fsum_dot(weights, values) -> float:
    return math.fsum((np.asarray(weights, dtype=float) * np.asarray(values, dtype=float)).tolist())


def _one_minus_q_pow(p: float, n: int) -> float:
    """1 - (1-p)^n without cancellation for small p."""
    if p >= 1.0:
        return 1.0
    return -math.expm1(n * math.log1p(-p))


def _check_order(r: int) -> None:
    if r not in (1, 2):
        raise ValueError(f"only moment orders 1 and 2 are supported, got {r}")


SMALL_A = 0.1


class Strategy:
    """Common behaviour; subclasses define ``n`` and ``pmf_vector``."""

    n: int

    def pmf_vector(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    def pmf(self, s: int) -> float:
        if not (isinstance(s, (int, np.integer)) and 1 <= s <= self.n):
            raise RangeError(f"s={s} outside the support {{1..{self.n}}}")
        return float(self.pmf_vector()[s - 1])

    def expected_servers(self) -> float:
        return _fsum_dot(self.pmf_vector(), self.support)

    def direct_exp_moment(self, a: float, r: int = 1) -> float:
        """E[S^r e^{-aS}] by summation over the support."""
        _check_order(r)
        s = self.support.astype(float)
        return _fsum_dot(self.pmf_vector(), s ** r * np.exp(-a * s))

    def exp_moment(self, a: float, r: int = 1) -> float:
        if a < 0:
            raise ValueError("exponent a must be non-negative")
        return self.direct_exp_moment(a, r)

    def exp_moment_partial(self, c: float, phi: float, r: int = 1) -> float:
        """E[S^r exp(-c S^phi)]; phi = 1 falls back to :meth:`exp_moment`."""
        _check_order(r)
        if c < 0 or not 0.0 <= phi <= 1.0:
            raise ValueError("need c >= 0 and phi in [0, 1]")
        if phi == 1.0:
            return self.exp_moment(c, r)
        s = self.support.astype(float)
        return _fsum_dot(self.pmf_vector(), s ** r * np.exp(-c * s ** phi))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class DeterministicStrategy(Strategy):
    s: int
    n: int = 0

    def __post_init__(self):
        if self.n == 0:
            object.__setattr__(self, "n", self.s)
        if not 1 <= self.s <= self.n:
            raise ConfigError(f"deterministic strategy needs 1 <= s <= N, got s={self.s}, N={self.n}")

    def pmf_vector(self):
        v = np.zeros(self.n)
        v[self.s - 1] = 1.0
        return v

    def expected_servers(self):
        return float(self.s)

    def exp_moment(self, a, r=1):
        _check_order(r)
        return self.s ** r * math.exp(-a * self.s)

    def to_dict(self):
        return {"kind": "deterministic", "s": self.s, "n": self.n}


@dataclass(frozen=True)
class UniformStrategy(Strategy):
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("uniform strategy needs N >= 1")

    def pmf_vector(self):
        return np.full(self.n, 1.0 / self.n)

    def expected_servers(self):
        return (self.n + 1) / 2.0

    def exp_moment(self, a, r=1):
        _check_order(r)
        if a < 0:
            raise ValueError("exponent a must be non-negative")
        if a == 0.0:
            n = self.n
            return (n + 1) / 2.0 if r == 1 else (n + 1) * (2 * n + 1) / 6.0
        if a < SMALL_A:
            # the geometric-sum form cancels catastrophically as a -> 0
            return self.direct_exp_moment(a, r)
        n = self.n
        x = math.exp(-a)
        om = -math.expm1(-a)  # 1 - e^{-a}
        tail = -math.expm1(-(n + 1) * a)  # 1 - e^{-(N+1)a}
        first = x / (n * om) * (tail / om - (n + 1) * math.exp(-a * n))
        if r == 1:
            return first
        # E[S(S-1) e^{-aS}] + E[S e^{-aS}]
        falling = x * x / (n * om) * (
            2.0 * tail / om ** 2
            - 2.0 * (n + 1) * math.exp(-n * a) / om
            - (n + 1) * n * math.exp(-(n - 1) * a)
        )
        return falling + first

    def to_dict(self):
        return {"kind": "uniform", "n": self.n}


@dataclass(frozen=True)
class TruncatedBinomial(Strategy):
    """Binomial(N, p) conditioned on S >= 1."""

    n: int
    p: float

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("binomial strategy needs N >= 1")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"binomial strategy needs p in (0, 1], got {self.p}")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def normaliser(self) -> float:
        return _one_minus_q_pow(self.p, self.n)

    def pmf_vector(self):
        s = np.arange(1, self.n + 1)
        return binom.pmf(s, self.n, self.p) / self.normaliser

    def expected_servers(self):
        return self.n * self.p / self.normaliser

    def exp_moment(self, a, r=1):
        _check_order(r)
        if a < 0:
            raise ValueError("exponent a must be non-negative")
        n, p, q = self.n, self.p, self.q
        pe = p * math.exp(-a)
        lead = n * pe / self.normaliser
        if r == 1:
            return lead * (pe + q) ** (n - 1)
        return lead * (n * pe + q) * (pe + q) ** (n - 2)

    def to_dict(self):
        return {"kind": "binomial", "n": self.n, "p": self.p}


# named coefficient sequences k -> log a_k for power-series strategies (vectorised in k)
def _geometric(k):
    return np.zeros_like(k, dtype=float)


def _poisson(k):
    return -gammaln(np.asarray(k, dtype=float) + 1.0)


def _logarithmic(k):
    return -np.log(np.asarray(k, dtype=float))


FAMILIES: dict = {
    "geometric": _geometric,
    "poisson": _poisson,
    "logarithmic": _logarithmic,
}


class ZetaSeries:
    """zeta(x) = sum_{k>=1} a_k x^k and its first two derivatives.

    ``coefficients`` is either a finite sequence (a_1, a_2, ...) or a
    vectorised callable k -> a_k for an infinite series, which is summed
    block-wise until the terms are negligible at machine precision. With
    ``log=True`` the callable returns log a_k instead, which keeps fast
    decaying coefficients such as 1/k! from underflowing.
    """

    block = 4096
    max_terms = 2_000_000

    def __init__(self, coefficients, name: Optional[str] = None, log: bool = False):
        self.name = name
        self._log = log
        if callable(coefficients):
            self._fn = coefficients
            self._finite = None
        else:
            arr = np.asarray(coefficients, dtype=float)
            if arr.ndim != 1 or np.any(arr < 0):
                raise ConfigError("power-series coefficients must be a non-negative 1-d sequence")
            self._fn = None
            self._finite = arr

    @classmethod
    def family(cls, name: str) -> "ZetaSeries":
        try:
            return cls(FAMILIES[name], name, log=True)
        except KeyError:
            raise ConfigError(f"unknown power-series family {name!r}") from None

    def _terms(self, k: np.ndarray, x: float, deriv: int) -> np.ndarray:
        """a_k * k!/(k-d)! * x^(k-d), assembled in log space."""
        kf = k.astype(float)
        with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
            if self._fn is None:
                log_a = np.log(self._finite[k - 1])
            elif self._log:
                log_a = np.asarray(self._fn(k), dtype=float)
            else:
                log_a = np.log(np.asarray(self._fn(k), dtype=float))
            fall = np.ones_like(kf)
            for j in range(deriv):
                fall *= kf - j
            expo = kf - deriv
            log_pow = np.where(expo > 0, expo * math.log(x) if x > 0 else -np.inf, 0.0)
            out = np.exp(log_a + np.log(fall) + log_pow)
        return np.where(fall > 0, out, 0.0)

    def __call__(self, x: float, deriv: int = 0) -> float:
        if x < 0:
            raise ValueError("zeta is evaluated on x >= 0")
        if self._fn is None:
            k = np.arange(1, len(self._finite) + 1)
            return math.fsum(self._terms(k, x, deriv))
        parts: list = []
        start = 1
        prev_max = math.inf
        while start <= self.max_terms:
            k = np.arange(start, start + self.block)
            t = self._terms(k, x, deriv)
            if not np.all(np.isfinite(t)):
                raise DivergenceError(f"zeta series overflows at x={x}")
            parts.extend(t.tolist())
            total = math.fsum(parts)
            block_max = float(np.max(np.abs(t)))
            # terms must shrink and the trailing block must be below rounding
            if block_max <= prev_max and t[-1] <= t[0] and block_max * self.block <= 1e-17 * abs(total):
                return total
            if total == 0.0 and block_max == 0.0:
                return 0.0
            prev_max = block_max
            start += self.block
        raise DivergenceError(f"zeta series did not converge at x={x} within {self.max_terms} terms")


@dataclass(frozen=True)
class PowerSeries(Strategy):
    """pmf(s) proportional to a_s kappa^s on {1..N}.

    ``coefficients`` holds a_1..a_N. ``family`` optionally names the
    infinite coefficient sequence the truncation came from, enabling the
    untruncated (support on all positive integers) evaluation.
    """

    coefficients: tuple
    kappa: float
    family: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if len(self.coefficients) < 1:
            raise ConfigError("power-series strategy needs at least one coefficient")
        if any(c < 0 for c in self.coefficients) or not any(c > 0 for c in self.coefficients):
            raise ConfigError("coefficients must be non-negative and not all zero")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")

    @classmethod
    def from_family(cls, family: str, kappa: float, n: int) -> "PowerSeries":
        fn = FAMILIES.get(family)
        if fn is None:
            raise ConfigError(f"unknown power-series family {family!r}")
        return cls(tuple(np.exp(fn(np.arange(1, n + 1)))), kappa, family)

    @property
    def n(self) -> int:
        return len(self.coefficients)

    @property
    def zeta(self) -> ZetaSeries:
        """Truncated generating function zeta_N(x) = sum_{k<=N} a_k x^k."""
        return ZetaSeries(self.coefficients)

    def untruncated_zeta(self) -> ZetaSeries:
        return ZetaSeries.family(self.family) if self.family else self.zeta

    def pmf_vector(self):
        s = np.arange(1, self.n + 1)
        w = np.asarray(self.coefficients) * np.exp(s * math.log(self.kappa))
        return w / math.fsum(w)

    def exp_moment(self, a, r=1):
        return power_series_moment(self.zeta, self.kappa, a, r)

    def untruncated_exp_moment(self, a, r=1):
        return power_series_moment(self.untruncated_zeta(), self.kappa, a, r)

    def to_dict(self):
        d = {"kind": "power_series", "kappa": self.kappa, "coefficients": list(self.coefficients)}
        if self.family:
            d["family"] = self.family
        return d


def power_series_moment(zeta: ZetaSeries, kappa: float, a: float, r: int = 1) -> float:
    """E[S^r e^{-aS}] for pmf a_s kappa^s / zeta(kappa), via zeta' and zeta''."""
    _check_order(r)
    z = zeta(kappa)
    if not (math.isfinite(z) and z > 0):
        raise DivergenceError(f"zeta(kappa) is not a positive finite number at kappa={kappa}")
    x = kappa * math.exp(-a)
    d1 = zeta(x, 1)
    if r == 1:
        return x * d1 / z
    return x * (x * zeta(x, 2) + d1) / z


@dataclass(frozen=True)
class ExplicitPmf(Strategy):
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) < 1 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ConfigError("explicit pmf needs non-negative finite weights with positive sum")
        object.__setattr__(self, "weights", tuple((w / w.sum()).tolist()))

    @property
    def n(self) -> int:
        return len(self.weights)

    def pmf_vector(self):
        return np.asarray(self.weights)

    def to_dict(self):
        return {"kind": "explicit", "weights": list(self.weights)}


def from_dict(data: dict) -> Strategy:
    kind = data.get("kind")
    try:
        if kind == "deterministic":
            return DeterministicStrategy(int(data["s"]), int(data.get("n", data["s"])))
        if kind == "uniform":
            return UniformStrategy(int(data["n"]))
        if kind == "binomial":
            return TruncatedBinomial(int(data["n"]), float(data["p"]))
        if kind == "power_series":
            if "coefficients" in data:
                return PowerSeries(tuple(data["coefficients"]), float(data["kappa"]), data.get("family"))
            return PowerSeries.from_family(data["family"], float(data["kappa"]), int(data["n"]))
        if kind == "explicit":
            return ExplicitPmf(tuple(data["weights"]))
    except KeyError as exc:
        raise ConfigError(f"strategy {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown strategy kind {kind!r}")
