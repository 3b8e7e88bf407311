import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fjlab import distributions as dist
from fjlab.decay import check_stability, decay_rates, solve_theta, solve_theta_for
from fjlab.errors import NoRootError
from fjlab.system import FJSystemSpec, Server


def test_stability_examples():
    assert check_stability(FJSystemSpec.exponential([1.5, 1.25, 1.0], 0.5))
    assert not check_stability(FJSystemSpec.exponential([1.0], 1.0))
    assert not check_stability(FJSystemSpec.homogeneous(1, dist.Deterministic(2.0), dist.Exponential(0.9)))


def test_exponential_root():
    theta = solve_theta_for(dist.Exponential(1.0), dist.Exponential(0.9))
    assert theta == pytest.approx(0.1, abs=1e-12)


def test_scaled_root():
    svc = dist.scale(dist.Exponential(1.0), 2, 1.0)
    assert solve_theta_for(svc, dist.Exponential(0.9)) == pytest.approx(1.1, abs=1e-12)


def test_uniform_root_grid_scan():
    svc, arr = dist.UniformInterval(0.001, 2.009), dist.Exponential(0.9)
    theta = solve_theta_for(svc, arr)
    assert abs(svc.mgf(theta) * arr.laplace(theta) - 1.0) <= 1e-10
    # oracle: the first sign change of alpha*beta - 1 on a 1e-3 grid
    grid = np.arange(1e-3, 1.0, 1e-3)
    g = np.array([svc.mgf(x) * arr.laplace(x) - 1.0 for x in grid])
    k = int(np.flatnonzero(g > 0)[0])
    assert grid[k - 1] <= theta <= grid[k]


def test_unstable_raises():
    with pytest.raises(NoRootError):
        solve_theta_for(dist.Exponential(1.0), dist.Exponential(1.0))
    with pytest.raises(NoRootError):
        solve_theta_for(dist.Deterministic(2.0), dist.Exponential(0.9))


def test_deterministic_below_arrivals_is_infinite():
    # D/D/1 with service below the inter-arrival time never queues
    assert solve_theta_for(dist.Deterministic(0.5), dist.Deterministic(1.0)) == math.inf


def test_generic_solver_callable_interface():
    theta = solve_theta(lambda x: 2.0 / (2.0 - x), lambda x: 1.0 / (1.0 + x), 2.0)
    assert theta == pytest.approx(1.0, abs=1e-12)


def test_decay_rates_examples():
    rates = decay_rates(FJSystemSpec.exponential([1.0, 1.0], 0.9))
    assert rates.per_server == pytest.approx((0.1, 0.1), abs=1e-12)
    assert rates.theta_tilde == pytest.approx(0.1, abs=1e-12)


def test_never_selected_server_is_infinite():
    rates = decay_rates(FJSystemSpec.exponential([1.0, 2.0], 0.9, pis=[0.0, 1.0]))
    assert rates.per_server[0] == math.inf
    assert rates.theta_tilde == pytest.approx(1.1, abs=1e-12)


def test_spot_on_demand_min():
    arr = dist.Exponential(0.9)
    system = FJSystemSpec((Server(dist.Exponential(1.0)), Server(dist.UniformInterval(0.001, 2.009))), arr)
    rates = decay_rates(system)
    assert rates.theta_tilde == rates.per_server[0]
    assert rates.per_server[0] == pytest.approx(0.1, abs=1e-12)
    assert rates.per_server[1] > rates.per_server[0]


def test_thinned_root_and_residual():
    system = FJSystemSpec.exponential([1.0], 0.9, pis=[0.5])
    theta = decay_rates(system).per_server[0]
    a = dist.thin(dist.Exponential(1.0), 0.5)
    assert abs(a.mgf(theta) * dist.Exponential(0.9).laplace(theta) - 1.0) <= 1e-10
    assert theta == pytest.approx(0.55, abs=1e-12)  # (1 - pi) + pi mu/(mu - t) = (0.9 + t)/0.9


def test_offending_server_index():
    with pytest.raises(NoRootError) as info:
        decay_rates(FJSystemSpec.exponential([2.0, 0.8], 0.9))
    assert info.value.server == 1


@given(st.floats(0.5, 3.0), st.floats(0.05, 0.95), st.integers(1, 10), st.sampled_from([0.0, 0.2, 0.5, 1.0]))
def test_closed_form_scaled(mu, frac, s, phi):
    lam = frac * mu
    theta = solve_theta_for(dist.scale(dist.Exponential(mu), s, phi), dist.Exponential(lam))
    assert theta == pytest.approx(s ** phi * mu - lam, abs=1e-9)


@given(st.floats(0.5, 3.0), st.floats(0.05, 0.9), st.floats(1.01, 2.0))
def test_monotone_in_rate(mu, frac, up):
    lam = frac * mu
    slow = solve_theta_for(dist.UniformInterval(0.0, 2.0 / mu), dist.Exponential(lam))
    fast = solve_theta_for(dist.UniformInterval(0.0, 2.0 / (mu * up)), dist.Exponential(lam))
    assert fast >= slow


@given(st.lists(st.floats(1.0, 4.0), min_size=1, max_size=6), st.floats(0.1, 0.9))
def test_theta_tilde_is_min(rates, lam):
    r = decay_rates(FJSystemSpec.exponential(rates, lam))
    assert r.theta_tilde == min(r.per_server)
    for mu, t in zip(rates, r.per_server):
        assert t == pytest.approx(mu - lam, abs=1e-9)
