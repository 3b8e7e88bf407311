import math
import warnings

import numpy as np
import pytest

from fjlab import bounds as B
from fjlab import distributions as dist
from fjlab.distributions import make_rng
from fjlab.errors import ConfigError, EmptyError
from fjlab.simulator import (CHUNK, SimulationConfig, SimulationResult, Stratum, _lindley_chunk, _run_queue,
                             empirical_ccdf, fit_log_growth, lindley_reference, simulate)
from fjlab.strategies import TruncatedBinomial, UniformStrategy
from fjlab.system import FJSystemSpec, Server, TwoClass


def _chunked(x, t, chunk):
    w0 = np.zeros(x.shape[1])
    out = []
    for start in range(0, len(x), chunk):
        w, w0 = _lindley_chunk(x[start:start + chunk], t[start:start + chunk], w0)
        out.append(w)
    return np.vstack(out)


def test_kernel_matches_sequential_recursion():
    rng = make_rng(1)
    n = 3 * CHUNK + 17
    x = rng.exponential(1.0, (n, 3))
    t = rng.exponential(1 / 0.8, n)
    w = _chunked(x, t, CHUNK)
    for k in range(3):
        assert np.allclose(w[:, k], lindley_reference(x[:, k], t), rtol=1e-9, atol=1e-9)
    # chunk size does not matter beyond rounding
    assert np.allclose(w, _chunked(x, t, 1000), rtol=1e-9, atol=1e-9)


def test_removing_a_server_never_increases_waiting():
    rng = make_rng(2)
    x = rng.exponential(1.0, (5000, 4))
    t = rng.exponential(1 / 0.7, 5000)
    full = _chunked(x, t, CHUNK).max(axis=1)
    fewer = _chunked(x[:, :3], t, CHUNK).max(axis=1)
    assert np.all(fewer <= full)


def test_single_server_response_is_waiting_plus_service():
    rng = make_rng(3)
    w, r = _run_queue(rng, [dist.Exponential(1.0)], dist.Exponential(0.5), 5000, 0)
    rng = make_rng(3)
    t = dist.Exponential(0.5).sample(rng, 5000)
    x = rng.exponential(1.0, (5000, 1))[:, 0]
    assert np.allclose(r - w, x)
    assert np.allclose(w, lindley_reference(x, t), atol=1e-9)


def test_waiting_below_response_and_nonnegative():
    system = FJSystemSpec.exponential([1.0, 1.5, 2.0], 0.5)
    res = simulate(SimulationConfig(system, n_jobs=20_000, seed=4))
    st = res.strata[0]
    assert np.all(st.waiting >= 0) and np.all(st.waiting <= st.response)


def test_deterministic_zero_service():
    system = FJSystemSpec.homogeneous(3, dist.Deterministic(0.0), dist.Exponential(1.0))
    res = simulate(SimulationConfig(system, n_jobs=5000, seed=1))
    assert np.all(res.waiting == 0.0) and np.all(res.response == 0.0)


def test_mm1_mean_matches_theory():
    mu, lam = 1.0, 0.5
    res = simulate(SimulationConfig(FJSystemSpec.exponential([mu], lam), n_jobs=400_000, replications=2, seed=8))
    theory = (lam / mu) / (mu - lam)
    assert abs(res.mean() - theory) <= 3 * res.mean_se()


def test_mm1_dominance():
    system = FJSystemSpec.exponential([1.0], 0.9)
    res = simulate(SimulationConfig(system, n_jobs=300_000, seed=10))
    sig = np.linspace(0, 60, 13)
    est, se = res.ccdf(sig)
    se = np.maximum(se, res.ccdf_batch_se(sig))
    assert np.all(est <= np.exp(-0.1 * sig) + 3 * se)


def test_ccdf_edges_and_monotone():
    res = simulate(SimulationConfig(FJSystemSpec.exponential([1.0, 1.2], 0.6), n_jobs=20_000, seed=2))
    est, _ = empirical_ccdf(res, 0.0)
    assert est == 1.0
    assert empirical_ccdf(res, res.waiting.max() + 1.0)[0] == 0.0
    sig = np.linspace(0, 30, 61)
    vals, _ = res.ccdf(sig)
    assert np.all(np.diff(vals) <= 0)


def test_ccdf_is_right_continuous_at_samples():
    st = Stratum(1, 1.0, np.array([[0.0, 1.0, 2.0, 3.0]]), np.array([[0.5, 1.5, 2.5, 3.5]]))
    res = SimulationResult([st], seed=0, batches=2)
    assert res.ccdf(2.0)[0] == 0.5
    assert res.ccdf(2.0 + 1e-12)[0] == 0.25


def test_empty_result():
    res = SimulationResult([], seed=0)
    with pytest.raises(EmptyError):
        empirical_ccdf(res, 1.0)
    with pytest.raises(EmptyError):
        res.percentile(0.5)


def test_two_seed_agreement():
    system = FJSystemSpec.exponential([1.0, 1.4], 0.6)
    a = simulate(SimulationConfig(system, n_jobs=200_000, seed=100))
    b = simulate(SimulationConfig(system, n_jobs=200_000, seed=200))
    sig = np.array([1.0, 3.0, 6.0])
    ea, _ = a.ccdf(sig)
    eb, _ = b.ccdf(sig)
    sa, sb = a.ccdf_batch_se(sig), b.ccdf_batch_se(sig)
    assert np.all(np.abs(ea - eb) <= 4 * np.sqrt(sa ** 2 + sb ** 2))


def test_nearest_rank_percentile():
    x = np.arange(1.0, 1001.0)
    res = SimulationResult([Stratum(1, 1.0, x[None, :], x[None, :])], seed=0)
    for q in (0.5, 0.9, 0.99, 0.999):
        assert res.percentile(q) == x[math.ceil(q * x.size) - 1]


def test_weighted_percentile_mixture():
    lo = Stratum(1, 0.25, np.zeros((1, 100)), np.zeros((1, 100)))
    hi = Stratum(2, 0.75, np.ones((1, 10)), np.ones((1, 10)))
    res = SimulationResult([lo, hi], seed=0)
    assert res.percentile(0.2) == 0.0
    assert res.percentile(0.3) == 1.0
    assert res.effective_sample_size < 110
    assert res.mean() == pytest.approx(0.75)


def test_three_rates_mean_waiting_increases_with_pi():
    means = []
    for pi in (0.0, 0.5, 1.0):
        system = FJSystemSpec.exponential([1.5, 1.25, 1.0], 0.5, pis=[1.0, 1.0, pi])
        means.append(simulate(SimulationConfig(system, n_jobs=100_000, seed=5)).mean())
    assert means[0] < means[1] < means[2]


def test_thinned_system_dominance():
    system = FJSystemSpec.exponential([1.5, 1.25, 1.0], 0.5, pis=[1.0, 1.0, 0.5])
    res = simulate(SimulationConfig(system, n_jobs=200_000, seed=6))
    sig = np.linspace(0, 20, 11)
    est, se = res.ccdf(sig)
    bound = [B.waiting_bound_general(system, s) for s in sig]
    assert np.all(est <= np.array(bound) + 3 * np.maximum(se, res.ccdf_batch_se(sig)))


def test_determinism_and_thread_independence():
    system = FJSystemSpec.exponential([1.0] * 4, 0.5, phi=0.5)
    cfg = SimulationConfig(system, TruncatedBinomial(4, 0.5), n_jobs=10_000, replications=2, seed=42)
    a, b = simulate(cfg), simulate(cfg)
    c = simulate(cfg, threads=3)
    for x, y in ((a, b), (a, c)):
        assert np.array_equal(x.waiting, y.waiting) and np.array_equal(x.response, y.response)
    d = simulate(SimulationConfig(system, TruncatedBinomial(4, 0.5), n_jobs=10_000, replications=2, seed=43))
    assert not np.array_equal(a.waiting, d.waiting)


def test_per_run_strata_and_scaling_dominance():
    n, mu, lam, phi = 5, 1.0, 0.5, 0.5
    strat = TruncatedBinomial(n, 0.5)
    system = FJSystemSpec.exponential([mu] * n, lam, phi=phi)
    res = simulate(SimulationConfig(system, strat, n_jobs=200_000, seed=7))
    assert [st.s for st in res.strata] == [1, 2, 3, 4, 5]
    assert sum(st.weight for st in res.strata) == pytest.approx(1.0)
    sig = np.linspace(0, 15, 16)
    est, se = res.ccdf(sig)
    bound = B.waiting_bound_scaled
    b = np.array([bound(mu, lam, strat, phi, s) for s in sig])
    assert np.all(est <= b + 3 * np.maximum(se, res.ccdf_batch_se(sig)))


def test_reweighted_matches_direct_weights():
    system = FJSystemSpec.exponential([1.0] * 4, 0.5)
    base = simulate(SimulationConfig(system, UniformStrategy(4), n_jobs=20_000, seed=3, allocation="equal"))
    strat = TruncatedBinomial(4, 0.3)
    rw = base.reweighted(strat)
    expected = sum(strat.pmf(st.s) * st.waiting.mean() for st in base.strata)
    assert rw.mean() == pytest.approx(expected, rel=1e-12)


def test_per_job_mode():
    system = FJSystemSpec.exponential([1.0] * 4, 0.5, phi=1.0)
    res = simulate(SimulationConfig(system, TruncatedBinomial(4, 0.5), strategy_mode="per_job", n_jobs=20_000, seed=1))
    assert len(res.strata) == 1
    assert np.all(res.waiting <= res.response)


def test_rate_model_simulation_runs_and_dominates():
    model = TwoClass(0.5, 1.0, 0.5)
    strat = UniformStrategy(5)
    system = FJSystemSpec.exponential([1.0] * 5, 0.1, phi=0.2)
    res = simulate(SimulationConfig(system, strat, model, n_jobs=20_000, replications=20, seed=9))
    sig = np.linspace(0, 10, 11)
    est, se = res.ccdf(sig)
    b = np.array([B.bounds_hetero_general(strat, model, 0.2, 0.1, s)[0] for s in sig])
    assert np.all(est <= b + 3 * np.maximum(se, res.ccdf_batch_se(sig)))


def test_unstable_warns_and_caps():
    system = FJSystemSpec.exponential([1.0], 1.2)
    with pytest.warns(RuntimeWarning):
        res = simulate(SimulationConfig(system, n_jobs=100_000, seed=1))
    assert res.metadata["unstable"] and res.metadata["horizon_capped"]
    assert res.metadata["n_jobs"] < 100_000


def test_stable_run_has_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        simulate(SimulationConfig(FJSystemSpec.exponential([1.0], 0.5), n_jobs=5000, seed=1))


def test_config_errors():
    system = FJSystemSpec.exponential([1.0] * 3, 0.5)
    with pytest.raises(ConfigError):
        SimulationConfig(system, TruncatedBinomial(5, 0.5))
    with pytest.raises(ConfigError):
        SimulationConfig(system, n_jobs=1000, warmup=1000)
    with pytest.raises(ConfigError):
        SimulationConfig(system, replications=0)
    with pytest.raises(ConfigError):
        SimulationConfig(system, strategy_mode="sometimes")
    thinned = FJSystemSpec.exponential([1.0] * 3, 0.5, pis=[1.0, 0.5, 1.0])
    with pytest.raises(ConfigError):
        SimulationConfig(thinned, UniformStrategy(3))


def test_warmup_default():
    system = FJSystemSpec.exponential([1.0], 0.5)
    assert SimulationConfig(system, n_jobs=100_000).warmup == 10_000
    assert SimulationConfig(system, n_jobs=5_000).warmup == 1000
    assert SimulationConfig(system, n_jobs=1_000).warmup == 500


def test_growth_fit_degenerate_and_exact():
    rep = fit_log_growth([8, 8, 8], [1.0, 1.1, 0.9])
    assert rep.degenerate and rep.slope == 0.0
    x = np.array([2, 4, 8, 16])
    rep = fit_log_growth(x, 3.0 + 2.0 * np.log(x))
    assert rep.slope == pytest.approx(2.0) and rep.r2 == pytest.approx(1.0)
