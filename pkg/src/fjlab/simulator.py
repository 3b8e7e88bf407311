"""Discrete-event simulation of Fork-Join queues via per-server Lindley recursions.

Each server n evolves as W[n, j+1] = max(0, W[n, j] + X[n, j] - T[j]) with
W[n, 1] = 0 and the inter-arrival times T shared by all servers. A job waits
until its last task starts, W_j = max over its servers of W[n, j], and
leaves at R_j = max over its servers of W[n, j] + X[n, j].

Strategies are handled by stratification (``per_run``): for every s with
pmf(s) > 0 a separate system with s servers and service X / s^phi is run
and the strata are recombined with weights pmf(s). ``per_job`` redraws S
(and a random subset of servers) for every job instead; that regime is
offered for exploration only, the analytic bounds do not model it.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import distributions as dist
from .errors import ConfigError, EmptyError
from .strategies import Strategy
from .system import FJSystemSpec, TruncatedExponential, TwoClass

CHUNK = 8192
UNSTABLE_HORIZON = 20_000
PERCENTILES = (0.5, 0.9, 0.99, 0.999)


@dataclass
class SimulationConfig:
    system: FJSystemSpec
    strategy: Optional[Strategy] = None
    rate_model: Optional[object] = None  # TwoClass | TruncatedExponential, rates drawn per replication
    strategy_mode: str = "per_run"
    n_jobs: int = 100_000
    warmup: Optional[int] = None
    replications: int = 1
    seed: int = 0
    batches: int = 10
    allocation: str = "proportional"
    min_stratum_jobs: int = 2000

    def __post_init__(self):
        if self.warmup is None:
            self.warmup = min(max(self.n_jobs // 10, 1000), self.n_jobs // 2)
        if not self.n_jobs > self.warmup >= 0:
            raise ConfigError(f"need n_jobs > warmup >= 0, got n_jobs={self.n_jobs}, warmup={self.warmup}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.strategy_mode not in ("per_run", "per_job"):
            raise ConfigError(f"unknown strategy_mode {self.strategy_mode!r}")
        if self.allocation not in ("proportional", "equal"):
            raise ConfigError(f"unknown allocation {self.allocation!r}")
        if self.batches < 1:
            raise ConfigError("batches must be >= 1")
        n = self.system.n
        if self.strategy is not None:
            if self.strategy.n > n:
                raise ConfigError(f"strategy support {{1..{self.strategy.n}}} exceeds the {n} servers")
            if any(s.pi != 1.0 for s in self.system.servers):
                raise ConfigError("selection probabilities and a strategy cannot be combined")
        if self.rate_model is not None and self.strategy is None:
            raise ConfigError("a rate model needs a strategy")
        if self.rate_model is not None and not isinstance(self.system.arrival, dist.Exponential):
            raise ConfigError("rate models assume exponential arrivals")

    @property
    def n_post(self) -> int:
        return self.n_jobs - self.warmup


@dataclass
class Stratum:
    s: int  # number of servers used (0 for "all servers / thinned" runs)
    weight: float
    waiting: np.ndarray  # shape (replications, n_post_s)
    response: np.ndarray

    @property
    def size(self) -> int:
        return self.waiting.size


@dataclass
class SimulationResult:
    strata: list
    seed: int
    batches: int = 10
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._sorted: dict = {}

    # pooled views
    def _get(self, st: Stratum, metric: str) -> np.ndarray:
        if metric == "waiting":
            return st.waiting
        if metric == "response":
            return st.response
        raise ValueError(f"unknown metric {metric!r}")

    @property
    def waiting(self) -> np.ndarray:
        return np.concatenate([st.waiting.ravel() for st in self.strata])

    @property
    def response(self) -> np.ndarray:
        return np.concatenate([st.response.ravel() for st in self.strata])

    @property
    def sample_weights(self) -> np.ndarray:
        return np.concatenate([np.full(st.size, st.weight / st.size) for st in self.strata])

    @property
    def n_samples(self) -> int:
        return sum(st.size for st in self.strata)

    @property
    def effective_sample_size(self) -> float:
        w = self.sample_weights
        return float(w.sum() ** 2 / np.sum(w * w))

    def _sorted_stratum(self, i: int, metric: str) -> np.ndarray:
        key = (i, metric)
        if key not in self._sorted:
            self._sorted[key] = np.sort(self._get(self.strata[i], metric).ravel())
        return self._sorted[key]

    def _stratum_tail(self, i: int, metric: str, sigma: np.ndarray) -> np.ndarray:
        xs = self._sorted_stratum(i, metric)
        return (xs.size - np.searchsorted(xs, sigma, side="left")) / xs.size

    def ccdf(self, sigma, metric: str = "waiting"):
        """Estimate of P(metric >= sigma) with its binomial standard error."""
        if self.n_samples == 0:
            raise EmptyError("simulation result holds no samples")
        sig = np.atleast_1d(np.asarray(sigma, dtype=float))
        est = np.zeros_like(sig)
        var = np.zeros_like(sig)
        for i, st in enumerate(self.strata):
            p = self._stratum_tail(i, metric, sig)
            est += st.weight * p
            var += st.weight ** 2 * p * (1.0 - p) / st.size
        se = np.sqrt(var)
        if np.ndim(sigma) == 0:
            return float(est[0]), float(se[0])
        return est, se

    def ccdf_batch_se(self, sigma, metric: str = "waiting"):
        """Batch-means standard error of the CCDF estimate (accounts for autocorrelation)."""
        sig = np.atleast_1d(np.asarray(sigma, dtype=float))
        var = np.zeros_like(sig)
        for st in self.strata:
            data = self._get(st, metric)
            chunks = [c for row in data for c in np.array_split(row, self.batches) if c.size]
            if len(chunks) < 2:
                continue
            fr = np.array([(c[:, None] >= sig[None, :]).mean(axis=0) for c in chunks])
            var += st.weight ** 2 * fr.var(axis=0, ddof=1) / len(chunks)
        se = np.sqrt(var)
        return float(se[0]) if np.ndim(sigma) == 0 else se

    def ccdf_replication_se(self, sigma, metric: str = "waiting"):
        """Between-replication standard error (captures per-replication rate draws)."""
        sig = np.atleast_1d(np.asarray(sigma, dtype=float))
        var = np.zeros_like(sig)
        for st in self.strata:
            data = self._get(st, metric)
            if data.shape[0] < 2:
                continue
            fr = np.array([(row[:, None] >= sig[None, :]).mean(axis=0) for row in data])
            var += st.weight ** 2 * fr.var(axis=0, ddof=1) / data.shape[0]
        se = np.sqrt(var)
        return float(se[0]) if np.ndim(sigma) == 0 else se

    def ccdf_se(self, sigma, metric: str = "waiting"):
        """Conservative standard error: the largest of the binomial, batch-means and
        between-replication estimates."""
        _, se = self.ccdf(sigma, metric)
        return np.maximum(np.maximum(se, self.ccdf_batch_se(sigma, metric)),
                          self.ccdf_replication_se(sigma, metric))

    def mean(self, metric: str = "waiting") -> float:
        return math.fsum(st.weight * float(self._get(st, metric).mean()) for st in self.strata)

    def mean_se(self, metric: str = "waiting") -> float:
        """Batch-means standard error of :meth:`mean`."""
        var = 0.0
        for st in self.strata:
            data = self._get(st, metric)
            means = np.array([c.mean() for row in data for c in np.array_split(row, self.batches) if c.size])
            if means.size > 1:
                var += st.weight ** 2 * means.var(ddof=1) / means.size
        return math.sqrt(var)

    def percentile(self, q: float, metric: str = "waiting") -> float:
        """Weighted nearest-rank percentile of the pooled samples (0 < q < 1)."""
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        if self.n_samples == 0:
            raise EmptyError("simulation result holds no samples")
        x = np.concatenate([self._get(st, metric).ravel() for st in self.strata])
        w = self.sample_weights
        order = np.argsort(x, kind="stable")
        cum = np.cumsum(w[order])
        cum /= cum[-1]
        idx = int(np.searchsorted(cum, q - 1e-12, side="left"))
        return float(x[order[min(idx, x.size - 1)]])

    def percentiles(self, metric: str = "waiting") -> dict:
        return {q: self.percentile(q, metric) for q in PERCENTILES}

    def replication(self, r: int) -> "SimulationResult":
        strata = [Stratum(st.s, st.weight, st.waiting[r:r + 1], st.response[r:r + 1]) for st in self.strata]
        return SimulationResult(strata, self.seed, self.batches, dict(self.metadata))

    @property
    def replications(self) -> int:
        return self.strata[0].waiting.shape[0] if self.strata else 0

    def reweighted(self, strategy: Strategy) -> "SimulationResult":
        """Recombine per-run strata with the pmf of another strategy on the same support."""
        pmf = strategy.pmf_vector()
        have = {st.s: st for st in self.strata}
        strata = []
        for s in range(1, strategy.n + 1):
            w = float(pmf[s - 1])
            if w == 0.0:
                continue
            if s not in have:
                raise ConfigError(f"stratum s={s} was not simulated")
            st = have[s]
            strata.append(Stratum(s, w, st.waiting, st.response))
        return SimulationResult(strata, self.seed, self.batches, dict(self.metadata))

    def summary(self) -> dict:
        out = {"seed": self.seed, "n_samples": self.n_samples,
               "effective_sample_size": self.effective_sample_size}
        for metric in ("waiting", "response"):
            out[f"{metric}_mean"] = self.mean(metric)
            for q, v in self.percentiles(metric).items():
                out[f"{metric}_p{q * 100:g}"] = v
        return out


def empirical_ccdf(result: SimulationResult, sigma, metric: str = "waiting"):
    return result.ccdf(sigma, metric)


# --------------------------------------------------------------- kernels ---

def _lindley_chunk(x: np.ndarray, t: np.ndarray, w0: np.ndarray):
    """Per-server waiting times for one chunk of jobs.

    ``x``: (c, m) work brought by each job, ``t``: (c,) time to the next
    arrival, ``w0``: (m,) waiting time of the chunk's first job. Returns the
    (c, m) waiting times and the carry for the next chunk.
    """
    s = np.cumsum(x - t[:, None], axis=0)
    runmin = np.minimum.accumulate(s, axis=0)
    nxt = s - np.minimum(runmin, -w0[None, :])
    w = np.empty_like(x)
    w[0] = w0
    w[1:] = nxt[:-1]
    return w, nxt[-1]


def _run_queue(rng: np.random.Generator, services: Sequence, arrival, n_jobs: int, warmup: int,
               divisor: float = 1.0, pis: Optional[np.ndarray] = None,
               strategy_pmf: Optional[np.ndarray] = None, phi: float = 1.0):
    """One replication; returns post-warmup (waiting, response) arrays."""
    m = len(services)
    w_carry = np.zeros(m)
    out_w = np.empty(n_jobs - warmup)
    out_r = np.empty(n_jobs - warmup)
    same_exp = all(isinstance(d, dist.Exponential) and d == services[0] for d in services)
    pos = 0
    for start in range(0, n_jobs, CHUNK):
        c = min(CHUNK, n_jobs - start)
        t = np.asarray(arrival.sample(rng, c), dtype=float)
        if same_exp:
            x = rng.exponential(1.0 / services[0].rate, (c, m))
        else:
            x = np.empty((c, m))
            for k, d in enumerate(services):
                x[:, k] = d.sample(rng, c)
        mask = None
        if strategy_pmf is not None:
            # per-job S and a uniformly random subset of S servers
            s_job = rng.choice(np.arange(1, len(strategy_pmf) + 1), size=c, p=strategy_pmf)
            ranks = np.argsort(np.argsort(rng.random((c, m)), axis=1), axis=1)
            mask = ranks < s_job[:, None]
            x = x / (s_job[:, None].astype(float) ** phi)
        elif pis is not None:
            mask = rng.random((c, m)) < pis[None, :]
        if divisor != 1.0:
            x = x / divisor
        if mask is not None:
            x = np.where(mask, x, 0.0)
        w, w_carry = _lindley_chunk(x, t, w_carry)
        fin = w + x
        if mask is None:
            wj = w.max(axis=1)
            rj = fin.max(axis=1)
        else:
            wj = np.where(mask, w, 0.0).max(axis=1)
            rj = np.where(mask, fin, 0.0).max(axis=1)
        lo = max(warmup - start, 0)
        if lo < c:
            k = c - lo
            out_w[pos:pos + k] = wj[lo:]
            out_r[pos:pos + k] = rj[lo:]
            pos += k
    return out_w, out_r


def lindley_reference(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Plain sequential recursion for one server; used to cross-check the chunked kernel."""
    w = np.zeros(len(x))
    for j in range(1, len(x)):
        w[j] = max(0.0, w[j - 1] + x[j - 1] - t[j - 1])
    return w


# ------------------------------------------------------------- top level ---

def _stratum_stable(services, divisor, arrival, pis=None) -> bool:
    means = np.array([d.mean for d in services]) / divisor
    if pis is not None:
        means = means * pis
    return bool(np.all(means < arrival.mean))


def _rate_model_stable(model, s: int, phi: float, lam: float) -> bool:
    if isinstance(model, TwoClass):
        lowest = model.kappa1 if model.pi > 0 else model.kappa2
        return lowest * s ** phi > lam
    if isinstance(model, TruncatedExponential):
        return model.truncation * s ** phi >= lam
    return True


def simulate(config: SimulationConfig, threads: int = 1) -> SimulationResult:
    system = config.system
    arrival = system.arrival
    phi = system.phi
    meta = {"strategy_mode": config.strategy_mode, "unstable": False, "horizon_capped": False}

    # (key, s, weight, n_jobs, warmup, builder) tasks
    tasks = []
    if config.strategy is None:
        services = [srv.service for srv in system.servers]
        pis = np.array([srv.pi for srv in system.servers])
        stable = _stratum_stable(services, 1.0, arrival, pis)
        tasks.append((0, 1.0, stable, dict(services=services, pis=None if np.all(pis == 1.0) else pis)))
    elif config.strategy_mode == "per_job":
        services = [srv.service for srv in system.servers]
        pmf = np.zeros(system.n)
        pmf[: config.strategy.n] = config.strategy.pmf_vector()
        stable = _stratum_stable(services, 1.0, arrival)
        tasks.append((0, 1.0, stable, dict(services=services, strategy_pmf=pmf, phi=phi)))
    else:
        pmf = config.strategy.pmf_vector()
        for s in range(1, config.strategy.n + 1):
            if pmf[s - 1] <= 0.0:
                continue
            if config.rate_model is not None:
                stable = _rate_model_stable(config.rate_model, s, phi, 1.0 / arrival.mean)
                spec = dict(rate_model=config.rate_model, s=s)
            else:
                services = [srv.service for srv in system.servers[:s]]
                stable = _stratum_stable(services, s ** phi, arrival)
                spec = dict(services=services)
            spec["divisor"] = s ** phi
            tasks.append((s, float(pmf[s - 1]), stable, spec))

    n_jobs, warmup = config.n_jobs, config.warmup
    if not all(t[2] for t in tasks):
        meta["unstable"] = True
        if n_jobs > UNSTABLE_HORIZON:
            meta["horizon_capped"] = True
            warmup = min(warmup, UNSTABLE_HORIZON // 10)
            n_jobs = UNSTABLE_HORIZON
        warnings.warn(f"unstable configuration; sample horizon capped at {n_jobs} jobs", RuntimeWarning)

    def stratum_length(weight):
        post = n_jobs - warmup
        if config.strategy is None or config.strategy_mode == "per_job" or config.allocation == "equal":
            return n_jobs
        return warmup + max(min(config.min_stratum_jobs, post), int(round(post * weight)))

    def run_one(task, rep):
        s, weight, _, spec = task
        rng = dist.make_rng(config.seed, rep, s)
        length = stratum_length(weight)
        if "rate_model" in spec:
            rates = spec["rate_model"].sample_rates(rng, spec["s"])
            services = [dist.Exponential(float(r)) for r in rates]
        else:
            services = spec["services"]
        return _run_queue(rng, services, arrival, length, warmup,
                          divisor=spec.get("divisor", 1.0), pis=spec.get("pis"),
                          strategy_pmf=spec.get("strategy_pmf"), phi=spec.get("phi", 1.0))

    jobs = [(i, rep) for i in range(len(tasks)) for rep in range(config.replications)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(lambda ij: run_one(tasks[ij[0]], ij[1]), jobs))
    else:
        outputs = [run_one(tasks[i], rep) for i, rep in jobs]
    by_key = dict(zip(jobs, outputs))

    strata = []
    for i, (s, weight, _, _) in enumerate(tasks):
        ws = np.stack([by_key[(i, r)][0] for r in range(config.replications)])
        rs = np.stack([by_key[(i, r)][1] for r in range(config.replications)])
        strata.append(Stratum(s, weight, ws, rs))
    meta["n_jobs"] = n_jobs
    meta["warmup"] = warmup
    return SimulationResult(strata, config.seed, config.batches, meta)


# ------------------------------------------------------------ growth fit ---

@dataclass(frozen=True)
class GrowthReport:
    x: tuple
    y: tuple
    slope: float
    intercept: float
    r2: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"x": list(self.x), "y": list(self.y), "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2, "degenerate": self.degenerate}


def fit_log_growth(x: Sequence[float], y: Sequence[float]) -> GrowthReport:
    """Least-squares fit y = a + b log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    yy = np.asarray(y, dtype=float)
    if np.ptp(lx) == 0.0:
        return GrowthReport(tuple(map(float, x)), tuple(map(float, yy)), 0.0, float(yy.mean()),
                            math.nan, True)
    fit = stats.linregress(lx, yy)
    return GrowthReport(tuple(map(float, x)), tuple(map(float, yy)), float(fit.slope),
                        float(fit.intercept), float(fit.rvalue ** 2))


def percentile_growth_fit(n_values: Sequence[int], mu: float, lam: float, p: float = 1.0,
                          phi: float = 0.0, q: float = 0.999, against: str = "n",
                          n_jobs: int = 200_000, replications: int = 1, seed: int = 0,
                          threads: int = 1) -> GrowthReport:
    """Simulate the q-percentile of the waiting time for each N and fit it against log N
    (``against="n"``) or log E[S] (``against="expected_servers"``)."""
    from .strategies import TruncatedBinomial

    xs, ys = [], []
    for n in n_values:
        strat = TruncatedBinomial(int(n), p)
        system = FJSystemSpec.exponential([mu] * int(n), lam, phi=phi)
        cfg = SimulationConfig(system, strat, n_jobs=n_jobs, replications=replications, seed=seed)
        res = simulate(cfg, threads)
        xs.append(n if against == "n" else strat.expected_servers())
        ys.append(res.percentile(q))
    return fit_log_growth(xs, ys)
