import math

import numpy as np
import pytest

from itconsensus.noise import NoiseError, NoiseProcess, second_moment_bound, stationary_variance


def test_zero_power_is_identically_zero():
    p = NoiseProcess(power=0.0, seed=3)
    assert np.all(p.path(1e-3, 500) == 0.0)


def test_same_seed_same_path():
    a = NoiseProcess(seed=42).path(1e-3, 1000)
    b = NoiseProcess(seed=42).path(1e-3, 1000)
    assert np.array_equal(a, b)
    c = NoiseProcess(seed=43).path(1e-3, 1000)
    assert not np.array_equal(a, c)


def test_vectorized_path_matches_stepping():
    a = NoiseProcess(dim=2, seed=5).path(1e-3, 3000)
    p = NoiseProcess(dim=2, seed=5)
    b = np.vstack([np.zeros(2)] + [p.step(1e-3) for _ in range(3000)])
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_misaligned_steps_hit_the_same_draws():
    fine = NoiseProcess(seed=9).path(0.01, 300)
    p = NoiseProcess(seed=9)
    coarse = np.array([p.step(0.03) for _ in range(100)])
    np.testing.assert_allclose(coarse[:, 0], fine[3::3, 0], atol=1e-10)


def test_exact_filter_between_draws():
    # with the sample held, x(t) = w + (x0 - w) exp(-t / tc)
    p = NoiseProcess(seed=1, initial=[0.7])
    x1 = p.step(0.02)[0]
    w = p._w[0]
    assert x1 == pytest.approx(w + (0.7 - w) * math.exp(-0.02 / 0.1), rel=1e-12)


def test_step_larger_than_correlation_time():
    with pytest.raises(NoiseError, match="correlation time"):
        NoiseProcess().step(0.2)


@pytest.mark.parametrize("kw", [dict(time_constant=0), dict(correlation_time=-1), dict(power=-1)])
def test_invalid_parameters(kw):
    with pytest.raises(NoiseError):
        NoiseProcess(**kw)


def test_stationary_variance_against_ensemble():
    dt, n = 1e-3, 2000
    p = NoiseProcess(dim=4000, time_constant=0.1, power=1.0, correlation_time=0.1, seed=2024)
    xs = p.path(dt, n)[1000:]  # 10 filter time constants of burn-in
    empirical = float(np.mean(xs**2))
    assert empirical == pytest.approx(stationary_variance(0.1, 1.0, 0.1, dt), rel=0.03)


def test_stationary_variance_limits():
    # a very slow filter barely reacts; a very fast one follows the held sample
    assert stationary_variance(100.0, 1.0, 0.1, 1e-3) < 1e-2
    assert stationary_variance(1e-4, 1.0, 0.1, 1e-3) == pytest.approx(10.0, rel=1e-2)


def test_second_moment_bound():
    p = NoiseProcess(seed=0)
    with pytest.raises(NoiseError):
        second_moment_bound(p, 1.0, ensemble=5)
    assert second_moment_bound(NoiseProcess(power=0.0), 1.0, ensemble=10) == 0.0
    b = second_moment_bound(p, 2.0, ensemble=200, dt=1e-2)
    assert 0 < b < 10.0
