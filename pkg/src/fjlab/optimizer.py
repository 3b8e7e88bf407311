"""Strategy optimisation against the scaled and heterogeneous tail bounds.

Both bound objectives are linear in the pmf of S, so over the simplex the
minimum sits at a vertex (a deterministic strategy). The binomial family is
searched on a grid refined by a bounded scalar minimiser, and for phi = 1
the sign of d psi / d q is certified through Q(q) and Descartes' rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp
from scipy.stats import binom

from . import bounds
from .errors import InfeasibleError, StabilityError
from .strategies import DeterministicStrategy, TruncatedBinomial

METRICS = ("waiting", "response")


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def _check_homogeneous(mu: float, lam: float, sigma: float) -> None:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not mu > lam > 0:
        raise StabilityError(f"need mu > lambda > 0, got mu={mu}, lambda={lam}")


def _log_vertex_values(n: int, mu: float, lam: float, phi: float, sigma: float, metric: str) -> np.ndarray:
    """log of the bound at each deterministic strategy s = 1..N."""
    s = np.arange(1, n + 1, dtype=float)
    power = 1.0 if metric == "waiting" else 2.0
    out = lam * sigma + power * np.log(s) - mu * sigma * s ** phi
    if metric == "response":
        out -= math.log(lam / mu)
    return out


@dataclass(frozen=True)
class PmfOptimum:
    s_opt: int
    pmf: tuple
    objective: float
    vertex_values: tuple

    def to_dict(self) -> dict:
        return {"s_opt": self.s_opt, "pmf": list(self.pmf), "objective": self.objective,
                "vertex_values": list(self.vertex_values)}


def optimize_pmf(n: int, mu_or_rates, lam: float, phi: float, sigma: float,
                 metric: str = "waiting") -> PmfOptimum:
    """Best strategy over all pmfs on {1..N}: the best deterministic one.

    ``mu_or_rates`` is a common rate, a list of per-server rates or a
    hierarchical rate model. Ties go to the smaller s.
    """
    _check_metric(metric)
    if isinstance(mu_or_rates, (int, float)):
        _check_homogeneous(float(mu_or_rates), lam, sigma)
        logs = _log_vertex_values(n, float(mu_or_rates), lam, phi, sigma, metric)
        k = int(np.argmin(logs))  # first occurrence: smallest s on ties
        values = np.exp(logs)
    else:
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        idx = 0 if metric == "waiting" else 1
        values = np.array([
            bounds.bounds_hetero_general(DeterministicStrategy(s, n), mu_or_rates, phi, lam, sigma)[idx]
            for s in range(1, n + 1)])
        k = int(np.argmin(values))
    pmf = np.zeros(n)
    pmf[k] = 1.0
    return PmfOptimum(k + 1, tuple(pmf.tolist()), float(values[k]), tuple(values.tolist()))


# ------------------------------------------------------------ binomial p ---

def binomial_log_objective(n: int, p: float, mu: float, lam: float, phi: float, sigma: float,
                           metric: str = "waiting") -> float:
    """log of the scaled bound for Bin(N, p) conditioned on S >= 1."""
    return float(_binomial_log_objective_grid(n, np.array([p]), mu, lam, phi, sigma, metric)[0])


def _binomial_log_objective_grid(n, ps, mu, lam, phi, sigma, metric):
    s = np.arange(1, n + 1)
    ps = np.asarray(ps, dtype=float)[:, None]
    log_pmf = binom.logpmf(s[None, :], n, ps)
    with np.errstate(divide="ignore"):  # p = 1 gives log1p(-1) = -inf and log_norm = 0
        log_norm = np.log(-np.expm1(n * np.log1p(-ps[:, 0])))
    vals = log_pmf + _log_vertex_values(n, mu, lam, phi, sigma, metric)[None, :]
    return logsumexp(vals, axis=1) - log_norm


@dataclass(frozen=True)
class Certificate:
    n: int
    eps: float
    coefficients: tuple
    sign_changes: int
    q0: float
    q1: float
    certified: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"n": self.n, "eps": self.eps, "coefficients": list(self.coefficients),
                "sign_changes": self.sign_changes, "q0": self.q0, "q1": self.q1,
                "certified": self.certified, "degenerate": self.degenerate}


def monotonicity_certificate(n: int, eps: float) -> Certificate:
    """Sign report for Q(q) = sum_{k=0}^{N-2} (N eps - 1 - k) q^k on [0, 1).

    Coefficients decrease strictly in k, so there is at most one sign
    change and hence at most one positive root; Q(0) > 0 and Q(1) > 0 then
    rule out a root in [0, 1].
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if n < 2:
        return Certificate(n, eps, (), 0, math.nan, math.nan, False, True)
    coef = np.array([n * eps - 1.0 - k for k in range(n - 1)])
    signs = np.sign(coef[coef != 0.0])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    q0 = n * eps - 1.0
    q1 = n * (n - 1) * (eps - 0.5)
    certified = changes <= 1 and q0 > 0 and q1 > 0
    return Certificate(n, eps, tuple(coef.tolist()), changes, q0, q1, certified)


@dataclass(frozen=True)
class BinomialOptimum:
    p_opt: float
    objective: float
    certificate: Optional[Certificate] = None
    grid_size: int = 0

    def to_dict(self) -> dict:
        out = {"p_opt": self.p_opt, "objective": self.objective, "grid_size": self.grid_size}
        out["certificate"] = self.certificate.to_dict() if self.certificate else None
        out["certified"] = bool(self.certificate and self.certificate.certified)
        return out


def optimize_binomial_p(n: int, mu: float, lam: float, phi: float, sigma: float,
                        resolution: float = 1e-3, metric: str = "waiting") -> BinomialOptimum:
    """Minimise the binomial-strategy bound over p in (0, 1].

    A uniform grid (p = 1 always included) locates the best cell, then a
    bounded scalar search refines it. For phi = 1 the certificate is
    attached and, when it certifies, p_opt = 1 is checked.
    """
    _check_metric(metric)
    _check_homogeneous(mu, lam, sigma)
    if n == 1:
        # S = 1 whatever p is
        val = math.exp(binomial_log_objective(1, 1.0, mu, lam, phi, sigma, metric))
        cert = monotonicity_certificate(1, -math.expm1(-mu * sigma)) if phi == 1.0 else None
        return BinomialOptimum(1.0, val, cert, 1)
    m = max(int(math.ceil(1.0 / resolution)), 2)
    grid = np.linspace(1.0 / m, 1.0, m)
    logs = _binomial_log_objective_grid(n, grid, mu, lam, phi, sigma, metric)
    k = int(np.argmin(logs))
    best_p, best_log = float(grid[k]), float(logs[k])
    lo = float(grid[k - 1]) if k > 0 else 0.5 * float(grid[0])
    hi = float(grid[min(k + 1, m - 1)])
    if hi > lo:
        res = minimize_scalar(lambda p: binomial_log_objective(n, p, mu, lam, phi, sigma, metric),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if res.success and res.fun < best_log:
            best_p, best_log = float(res.x), float(res.fun)
    cert = None
    if phi == 1.0 and metric == "waiting":
        cert = monotonicity_certificate(n, -math.expm1(-mu * sigma))
        if cert.certified and best_p != 1.0:
            raise AssertionError(f"certificate holds but the search returned p={best_p}")
    return BinomialOptimum(best_p, math.exp(best_log), cert, m)


# ---------------------------------------------------------------- budget ---

@dataclass(frozen=True)
class BudgetOptimum:
    p_star: float
    expected_servers: float
    objective: float

    def to_dict(self) -> dict:
        return {"p_star": self.p_star, "expected_servers": self.expected_servers,
                "objective": self.objective}


def binomial_budget_p(n: int, budget: float) -> float:
    """Largest p in (0, 1] with E[S] = N p / (1 - (1-p)^N) <= budget."""
    if budget < 1.0:
        raise InfeasibleError(f"budget S*={budget} is below the minimum E[S] = 1")
    if n == 1 or budget >= n:
        return 1.0
    if budget == 1.0:
        raise InfeasibleError("E[S] > 1 for every p in (0, 1] when N >= 2; S*=1 has no feasible p")
    lo, hi = 0.0, 1.0  # E[S](0+) = 1 < budget < N = E[S](1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid > 0 and TruncatedBinomial(n, mid).expected_servers() <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def optimize_budget(n: int, budget: float, mu: float, lam: float, sigma: float,
                    phi: float = 1.0, metric: str = "waiting") -> BudgetOptimum:
    _check_metric(metric)
    _check_homogeneous(mu, lam, sigma)
    p = binomial_budget_p(n, budget)
    strat = TruncatedBinomial(n, p)
    value = math.exp(binomial_log_objective(n, p, mu, lam, phi, sigma, metric))
    return BudgetOptimum(p, strat.expected_servers(), value)


# ------------------------------------------------------------ percentiles ---

def bound_percentile(mu: float, lam: float, strategy, phi: float, level: float = 1e-3,
                     metric: str = "waiting") -> float:
    """sigma at which the scaled bound falls to ``level`` (0.999-percentile for 1e-3)."""
    curves = bounds.scaled_curves(mu, lam, strategy, phi)
    curve = curves[0] if metric == "waiting" else curves[1]
    return bounds.invert_bound(curve, level)


def random_pmf_values(n: int, mu: float, lam: float, phi: float, sigma: float, count: int,
                      rng: np.random.Generator, metric: str = "waiting") -> np.ndarray:
    """Bound values at ``count`` pmfs drawn uniformly from the simplex."""
    from .strategies import ExplicitPmf

    fn = bounds.waiting_bound_scaled if metric == "waiting" else bounds.response_bound_scaled
    draws = rng.dirichlet(np.ones(n), size=count)
    return np.array([fn(mu, lam, ExplicitPmf(tuple(w)), phi, sigma) for w in draws])
