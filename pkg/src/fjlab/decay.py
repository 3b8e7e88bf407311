"""Decay rates: positive roots of mgf(x) * laplace(x) = 1 and the stability check."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from scipy.optimize import brentq

from . import distributions as dist
from .errors import DomainError, NoRootError
from .system import FJSystemSpec

EPS = 1e-12
RESIDUAL_TOL = 1e-10
_GROWTH_CAP = 1e8


@dataclass(frozen=True)
class DecayRates:
    per_server: tuple
    theta_tilde: float

    def to_dict(self) -> dict:
        return {"per_server": list(self.per_server), "theta_tilde": self.theta_tilde}


def check_stability(system: FJSystemSpec) -> bool:
    """Strict ``max_n E[X_n] < E[T]``."""
    return max(s.service.mean for s in system.servers) < system.arrival.mean


def _safe(fn: Callable[[float], float], x: float) -> Optional[float]:
    try:
        return fn(x)
    except DomainError:
        return None


def solve_theta(alpha: Callable[[float], float], beta: Callable[[float], float],
                theta_max: float = math.inf, *, log_alpha=None, log_beta=None) -> float:
    """Positive root of ``alpha(x) * beta(x) = 1``.

    ``alpha`` may raise ``DomainError`` past its domain; the upper bracket
    then shrinks toward the last admissible point. ``log_alpha`` /
    ``log_beta`` are used for the bracketing function when given, which
    keeps large arguments from overflowing.
    """
    la = log_alpha or (lambda x: math.log(alpha(x)))
    lb = log_beta or (lambda x: math.log(beta(x)))

    def g(x):
        return la(x) + lb(x)

    # upper bracket: a point with g > 0
    if math.isfinite(theta_max):
        hi = theta_max * (1.0 - EPS)
        good = 0.0
        g_hi = _safe(g, hi)
        while g_hi is None and hi - good > EPS * theta_max:
            hi = 0.5 * (good + hi)
            g_hi = _safe(g, hi)
        if g_hi is None or g_hi <= 0:
            raise NoRootError("alpha*beta stays below 1 on the whole MGF domain; the system is unstable")
    else:
        hi, good = 1.0, 0.0
        g_hi = _safe(g, hi)
        while True:
            if g_hi is None:
                hi = 0.5 * (good + hi)
                if hi - good < EPS:
                    raise NoRootError("could not bracket a root inside the MGF domain")
            elif g_hi > 0:
                break
            else:
                good = hi
                hi *= 2.0
                if hi > _GROWTH_CAP:
                    # work never outpaces arrivals (e.g. deterministic X < T): no queue builds
                    return math.inf
            g_hi = _safe(g, hi)

    # lower bracket: g < 0 just above zero (g is convex with g(0) = 0)
    lo = hi
    for _ in range(2000):
        lo *= 0.5
        if lo < EPS:
            raise NoRootError("alpha*beta does not dip below 1 near zero; the system is unstable")
        g_lo = g(lo)
        if g_lo < 0:
            break
    root = brentq(g, lo, hi, xtol=1e-15, rtol=4 * sys.float_info.epsilon, maxiter=500)
    residual = abs(alpha(root) * beta(root) - 1.0)
    if residual > RESIDUAL_TOL:
        raise NoRootError(f"root refinement stalled with residual {residual:.3e}")
    return root


def solve_theta_for(service: dist.AnyDistribution, arrival: dist.AnyDistribution) -> float:
    """Decay rate of a single queue; ``inf`` when the server never accumulates work."""
    if service.mean == 0.0:
        return math.inf
    if not service.mean < arrival.mean:
        raise NoRootError(
            f"server mean {service.mean} is not below the inter-arrival mean {arrival.mean}")
    return solve_theta(service.mgf, arrival.laplace, service.mgf_upper,
                       log_alpha=service.log_mgf, log_beta=lambda x: arrival.log_mgf(-x))


def decay_rates(system: FJSystemSpec) -> DecayRates:
    rates = []
    for idx, srv in enumerate(system.servers):
        thinned = dist.thin(srv.service, srv.pi)
        try:
            rates.append(solve_theta_for(thinned, system.arrival))
        except NoRootError as exc:
            raise NoRootError(f"server {idx}: {exc}", server=idx) from None
    finite = [r for r in rates if math.isfinite(r)]
    theta_tilde = min(finite) if finite else math.inf
    return DecayRates(tuple(rates), theta_tilde)
