"""Martingale tail bounds P(W >= sigma), P(R >= sigma) for Fork-Join systems.

Families
--------
general       heterogeneous servers with optional selection probabilities;
              sum over servers of exp(-theta_n sigma)
scaled        homogeneous exponential servers, strategy S, service X / S^phi
power_series  scaled bound for a power-series strategy via zeta', zeta''
two_class     heterogeneous rates from a two-point law, binomial S, phi = 1
hierarchical  rates from a truncated exponential, binomial S, phi = 1
heterogeneous general strategy, phi, and rates given as a list or a model

All functions return raw (possibly vacuous, > 1) bound values.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import binom

from .decay import DecayRates, decay_rates
from .errors import StabilityError
from .strategies import Strategy, TruncatedBinomial, ZetaSeries, power_series_moment
from .system import FJSystemSpec, TruncatedExponential, TwoClass


def _check_sigma(sigma: float) -> None:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")


# ---------------------------------------------------------------- general ---

def waiting_bound_general(system: FJSystemSpec, sigma: float,
                          rates: Optional[DecayRates] = None) -> float:
    _check_sigma(sigma)
    rates = rates or decay_rates(system)
    return math.fsum(math.exp(-t * sigma) for t in rates.per_server if math.isfinite(t))


def response_bound_general(system: FJSystemSpec, sigma: float,
                           rates: Optional[DecayRates] = None) -> float:
    """Prefactor is the unthinned service MGF at the (thinned) decay rate:
    the tagged job's own task is served in full wherever it is placed."""
    _check_sigma(sigma)
    rates = rates or decay_rates(system)
    terms = []
    for srv, t in zip(system.servers, rates.per_server):
        if math.isfinite(t):
            terms.append(srv.service.mgf(t) * math.exp(-t * sigma))
    return math.fsum(terms)


# ----------------------------------------------------------------- scaled ---

def _smallest_support(strategy: Strategy) -> int:
    pmf = strategy.pmf_vector()
    return int(np.flatnonzero(pmf > 0)[0]) + 1


def check_scaled_stability(mu: float, lam: float, strategy: Strategy, phi: float) -> None:
    """Every supported s must satisfy s^phi * mu > lambda."""
    s_min = _smallest_support(strategy)
    if not s_min ** phi * mu > lam:
        raise StabilityError(
            f"scaled system unstable: s={s_min} gives rate {s_min ** phi * mu} <= lambda={lam}")


def waiting_bound_scaled(mu: float, lam: float, strategy: Strategy, phi: float, sigma: float) -> float:
    _check_sigma(sigma)
    check_scaled_stability(mu, lam, strategy, phi)
    return math.exp(lam * sigma) * strategy.exp_moment_partial(mu * sigma, phi, 1)


def response_bound_scaled(mu: float, lam: float, strategy: Strategy, phi: float, sigma: float) -> float:
    _check_sigma(sigma)
    check_scaled_stability(mu, lam, strategy, phi)
    rho = lam / mu
    return math.exp(lam * sigma) / rho * strategy.exp_moment_partial(mu * sigma, phi, 2)


def binomial_waiting_bound(mu: float, lam: float, n: int, p: float, sigma: float) -> float:
    """Closed form for S ~ Bin(N, p), linear scaling: N e^{-theta sigma} p/(1-q^N) (p e^{-mu sigma} + q)^{N-1}."""
    if not mu > lam:
        raise StabilityError("need mu > lambda")
    q = 1.0 - p
    theta = mu - lam
    norm = TruncatedBinomial(n, p).normaliser
    return n * math.exp(-theta * sigma) * p / norm * (p * math.exp(-mu * sigma) + q) ** (n - 1)


def binomial_response_bound(mu: float, lam: float, n: int, p: float, sigma: float) -> float:
    if not mu > lam:
        raise StabilityError("need mu > lambda")
    q = 1.0 - p
    theta, rho = mu - lam, lam / mu
    norm = TruncatedBinomial(n, p).normaliser
    pe = p * math.exp(-mu * sigma)
    return n * math.exp(-theta * sigma) / rho * p / norm * (n * pe + q) * (pe + q) ** (n - 2)


# ----------------------------------------------------------- power series ---

def waiting_bound_power(kappa: float, zeta: ZetaSeries, mu: float, lam: float, sigma: float) -> float:
    _check_sigma(sigma)
    if not mu > lam:
        raise StabilityError("need mu > lambda")
    return math.exp(lam * sigma) * power_series_moment(zeta, kappa, mu * sigma, 1)


def response_bound_power(kappa: float, zeta: ZetaSeries, mu: float, lam: float, sigma: float) -> float:
    _check_sigma(sigma)
    if not mu > lam:
        raise StabilityError("need mu > lambda")
    return math.exp(lam * sigma) * mu / lam * power_series_moment(zeta, kappa, mu * sigma, 2)


# -------------------------------------------------- hierarchical closed forms ---

def waiting_bound_twoclass(n: int, p: float, model: TwoClass, lam: float, sigma: float) -> float:
    _check_sigma(sigma)
    model.check_arrival(lam)
    strat = TruncatedBinomial(n, p)  # validates p
    q = strat.q
    keep = 1.0 - model.pi

    def b(k):
        e = math.exp(-sigma * k)
        return e * (p * e + q) ** (n - 1)

    def c(k):
        e = math.exp(-sigma * k)
        return e * (p * keep * e + q) ** (n - 1)

    # b1 * [1 - (1-pi)(c1 - c2)/b1] written without the division
    inner = b(model.kappa1) - keep * (c(model.kappa1) - c(model.kappa2))
    return math.exp(lam * sigma) * n * p / strat.normaliser * inner


def waiting_bound_hierarchical(n: int, p: float, model: TruncatedExponential, sigma: float) -> float:
    _check_sigma(sigma)
    strat = TruncatedBinomial(n, p)
    lam, mu0 = model.truncation, model.mu0
    return (n * p * mu0 / (strat.normaliser * (mu0 + sigma))
            * (p * math.exp(-sigma * lam) + strat.q) ** (n - 1))


def _rate_list_terms(rates: Sequence[float], s: int, phi: float, sigma: float):
    r = np.asarray(rates[:s], dtype=float)
    e = math.exp(-r.min() * sigma * s ** phi)
    return e, float(r.sum()) * e


def _two_class_terms(model: TwoClass, s: int, phi: float, sigma: float):
    """(E[exp(-c Y_s)], E[(sum of rates) exp(-c Y_s)]) by enumerating the class counts."""
    c = sigma * s ** phi
    k = np.arange(s + 1)  # number of class-1 (rate kappa1) servers
    w = binom.pmf(k, s, model.pi)
    mins = np.where(k >= 1, model.kappa1, model.kappa2)
    sums = k * model.kappa1 + (s - k) * model.kappa2
    e = np.exp(-c * mins)
    return math.fsum((w * e).tolist()), math.fsum((w * sums * e).tolist())


def _trunc_exp_terms(model: TruncatedExponential, s: int, phi: float, sigma: float):
    """Order-statistic forms for rates lam0 + Exp(mu0).

    min = lam0 + M with M ~ Exp(s mu0); given M the other s-1 offsets exceed
    M by independent Exp(mu0) amounts, so sum = s lam0 + s M + (s-1)/mu0 in mean.
    """
    c = sigma * s ** phi
    nu = s * model.mu0
    lam0 = model.truncation
    e_min = model.min_mgf(s, -c)
    base = math.exp(-c * lam0)
    e_m = nu / (nu + c)
    e_mm = nu / (nu + c) ** 2
    e_sum = base * ((s * lam0 + (s - 1) / model.mu0) * e_m + s * e_mm)
    return e_min, e_sum


def bounds_hetero_general(strategy: Strategy, rates_or_model, phi: float, lam: float, sigma: float):
    """(waiting, response) bounds for rates drawn per server.

    ``rates_or_model`` is either a sequence of at least N fixed rates (the
    first s are used when S = s) or a :class:`TwoClass` /
    :class:`TruncatedExponential` model.
    """
    _check_sigma(sigma)
    pmf = strategy.pmf_vector()
    if isinstance(rates_or_model, TwoClass):
        rates_or_model.check_arrival(lam)
        terms = lambda s: _two_class_terms(rates_or_model, s, phi, sigma)
    elif isinstance(rates_or_model, TruncatedExponential):
        rates_or_model.check_arrival(lam)
        terms = lambda s: _trunc_exp_terms(rates_or_model, s, phi, sigma)
    else:
        rates = list(rates_or_model)
        if len(rates) < strategy.n:
            raise ValueError("need at least N service rates")
        if min(rates[: strategy.n]) <= lam:
            raise StabilityError("every service rate must exceed the arrival rate")
        terms = lambda s: _rate_list_terms(rates, s, phi, sigma)
    w_parts, r_parts = [], []
    for s in range(1, strategy.n + 1):
        ps = pmf[s - 1]
        if ps == 0.0:
            continue
        e_min, e_sum = terms(s)
        w_parts.append(ps * s * e_min)
        r_parts.append(ps * s ** phi * e_sum)
    growth = math.exp(lam * sigma)
    return growth * math.fsum(w_parts), growth / lam * math.fsum(r_parts)


# ------------------------------------------------------------------ curves ---

def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class TailBoundCurve:
    evaluator: Callable[[float], float]
    family: str
    metric: str  # "waiting" or "response"
    params: dict = field(default_factory=dict)
    theta_tilde: float = math.nan

    def __call__(self, sigma):
        if np.ndim(sigma) == 0:
            return self.evaluator(float(sigma))
        return np.array([self.evaluator(float(x)) for x in np.asarray(sigma)])

    @property
    def name(self) -> str:
        return f"{self.family}_{self.metric}"

    @property
    def hash(self) -> str:
        return params_hash({"family": self.family, "metric": self.metric, **self.params})

    def rows(self, sigmas):
        values = self(np.asarray(sigmas, dtype=float))
        for s, v in zip(sigmas, values):
            yield {"sigma": float(s), "bound": float(v), "theorem": self.family,
                   "metric": self.metric, "theta_tilde": self.theta_tilde, "params_hash": self.hash}


def invert_bound(curve: Callable[[float], float], target: float, sigma_max: float = 1e6) -> float:
    """Smallest sigma with curve(sigma) <= target (curve assumed eventually decreasing)."""
    if not 0 < target:
        raise ValueError("target level must be positive")
    if curve(0.0) <= target:
        return 0.0
    hi = 1.0
    while curve(hi) > target:
        hi *= 2.0
        if hi > sigma_max:
            raise ValueError(f"bound does not fall below {target} before sigma={sigma_max}")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    return brentq(lambda x: curve(x) - target, lo, hi, xtol=1e-12)


def general_curves(system: FJSystemSpec) -> list:
    rates = decay_rates(system)
    params = system.to_dict()
    return [
        TailBoundCurve(lambda s: waiting_bound_general(system, s, rates), "general", "waiting",
                       params, rates.theta_tilde),
        TailBoundCurve(lambda s: response_bound_general(system, s, rates), "general", "response",
                       params, rates.theta_tilde),
    ]


def scaled_curves(mu: float, lam: float, strategy: Strategy, phi: float) -> list:
    check_scaled_stability(mu, lam, strategy, phi)
    params = {"mu": mu, "lambda": lam, "phi": phi, "strategy": strategy.to_dict()}
    theta = _smallest_support(strategy) ** phi * mu - lam
    return [
        TailBoundCurve(lambda s: waiting_bound_scaled(mu, lam, strategy, phi, s), "scaled", "waiting",
                       params, theta),
        TailBoundCurve(lambda s: response_bound_scaled(mu, lam, strategy, phi, s), "scaled", "response",
                       params, theta),
    ]


def heterogeneous_curves(strategy: Strategy, rates_or_model, phi: float, lam: float) -> list:
    if hasattr(rates_or_model, "to_dict"):
        rm = rates_or_model.to_dict()
    else:
        rm = list(rates_or_model)
    params = {"lambda": lam, "phi": phi, "strategy": strategy.to_dict(), "rates": rm}
    return [
        TailBoundCurve(lambda s: bounds_hetero_general(strategy, rates_or_model, phi, lam, s)[0],
                       "heterogeneous", "waiting", params),
        TailBoundCurve(lambda s: bounds_hetero_general(strategy, rates_or_model, phi, lam, s)[1],
                       "heterogeneous", "response", params),
    ]
