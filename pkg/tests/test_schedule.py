import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpfield.errors import ContractError, ShapeError
from dpfield.schedule import (
    ancestral_step,
    build_linear_schedule,
    forward_diffuse,
    gaussian_optimal_eps,
    schedule_from_params,
)


def scalar_alpha_bar(T, b0, b1):
    # independent loop: plain floats, no numpy cumprod
    out, prod = [], 1.0
    for i in range(T):
        beta = b0 + (b1 - b0) * i / (T - 1) if T > 1 else b0
        prod *= 1.0 - beta
        out.append(prod)
    return out


def test_single_step_schedule():
    s = build_linear_schedule(T=1, beta_start=0.3, beta_end=0.3)
    assert s.alpha_bar.tolist() == pytest.approx([0.7])


def test_default_schedule_matches_scalar_loop():
    s = build_linear_schedule()
    ref = scalar_alpha_bar(1000, 1e-4, 0.02)
    assert s.alpha_bar[0] == pytest.approx(0.9999, abs=1e-15)
    assert s.alpha_bar[-1] == pytest.approx(ref[-1], rel=1e-10)
    assert 1e-6 < s.alpha_bar[-1] < 1e-4
    assert np.allclose(s.alpha_bar, ref, rtol=1e-10)
    assert s.beta[0] == 1e-4 and s.beta[-1] == pytest.approx(0.02)
    assert np.allclose(s.sigma, np.sqrt(s.beta))


def test_schedule_contracts():
    with pytest.raises(ContractError):
        build_linear_schedule(beta_start=0.02, beta_end=1e-4)
    with pytest.raises(ContractError):
        build_linear_schedule(T=0)
    with pytest.raises(ContractError):
        build_linear_schedule(sigma_rule="nope")
    s = build_linear_schedule(T=10)
    for bad in (0, 11, 2.5):
        with pytest.raises(ContractError):
            s.check_t(bad)


def test_schedule_arrays_are_read_only():
    s = build_linear_schedule(T=5)
    with pytest.raises(ValueError):
        s.beta[0] = 0.5


def test_posterior_sigma_rule():
    s = build_linear_schedule(T=50, sigma_rule="posterior")
    ab_prev = np.concatenate([[1.0], s.alpha_bar[:-1]])
    assert s.sigma[0] == 0.0
    assert np.allclose(s.sigma**2, s.beta * (1 - ab_prev) / (1 - s.alpha_bar))


def test_params_round_trip():
    s = build_linear_schedule(T=20, beta_start=1e-3, beta_end=0.05, sigma_rule="posterior")
    s2 = schedule_from_params(s.params())
    assert np.array_equal(s.sigma, s2.sigma)


def _schedule_with_alpha_bar(ab):
    # pick a one-step schedule whose alpha_bar is ab
    return build_linear_schedule(T=1, beta_start=1 - ab, beta_end=1 - ab)


def test_forward_diffuse_examples():
    s = _schedule_with_alpha_bar(0.25)
    assert forward_diffuse(np.array([1.0]), 1, np.array([1.0]), s)[0] == pytest.approx(0.5 + math.sqrt(0.75))
    tiny = build_linear_schedule(T=1, beta_start=1e-300, beta_end=1e-300)
    y0 = np.array([0.3, -0.7])
    assert np.array_equal(forward_diffuse(y0, 1, np.array([5.0, 5.0]), tiny), y0)


def test_forward_diffuse_per_element_t():
    s = build_linear_schedule(T=100)
    y0 = np.ones((3, 4, 2))
    eps = np.zeros_like(y0)
    out = forward_diffuse(y0, np.array([1, 50, 100]), eps, s)
    for i, t in enumerate([1, 50, 100]):
        assert np.allclose(out[i], math.sqrt(s.alpha_bar[t - 1]))


def test_forward_diffuse_shape_error():
    s = build_linear_schedule(T=10)
    with pytest.raises(ShapeError):
        forward_diffuse(np.ones(3), 1, np.ones(4), s)


def test_forward_moments_monte_carlo():
    s = build_linear_schedule()
    rng = np.random.default_rng(0)
    y0 = np.array([0.8, -0.2])
    n = 100_000
    for t in (10, 500):
        yt = forward_diffuse(np.broadcast_to(y0, (n, 2)), t, rng.standard_normal((n, 2)), s)
        ab = s.alpha_bar[t - 1]
        se = math.sqrt((1 - ab) / n)
        assert np.all(np.abs(yt.mean(0) - math.sqrt(ab) * y0) < 3 * se)
        assert np.all(np.abs(yt.var(0) - (1 - ab)) < 3 * (1 - ab) * math.sqrt(2 / (n - 1)))


def test_ancestral_step_example():
    # alpha_t = 0.99 and alpha_bar_t = 0.9 cannot both come from one linear
    # schedule, so build the coefficients directly
    s = build_linear_schedule(T=2)
    object.__setattr__(s, "alpha", np.array([0.5, 0.99]))
    object.__setattr__(s, "alpha_bar", np.array([0.5, 0.9]))
    out = ancestral_step(np.array([1.0]), np.array([0.5]), 2, np.array([0.0]), s)
    expected = (1.0 - (0.01 / math.sqrt(0.1)) * 0.5) / math.sqrt(0.99)
    assert out[0] == pytest.approx(expected, rel=1e-12)
    assert out[0] == pytest.approx(0.989147, abs=1e-6)


def test_ancestral_step_noop_and_t1():
    noop = build_linear_schedule(T=2)
    object.__setattr__(noop, "alpha", np.array([1.0, 1.0]))
    y = np.array([0.4, -0.1])
    assert np.array_equal(ancestral_step(y, np.zeros(2), 2, np.zeros(2), noop), y)
    s = build_linear_schedule(T=10)
    a = ancestral_step(y, np.ones(2), 1, np.array([10.0, -10.0]), s)
    b = ancestral_step(y, np.ones(2), 1, None, s)
    assert np.array_equal(a, b)


def test_ancestral_step_adds_sigma_z():
    s = build_linear_schedule(T=10)
    y = np.array([0.4, -0.1])
    z = np.array([1.0, 2.0])
    assert np.allclose(ancestral_step(y, y, 5, z, s) - ancestral_step(y, y, 5, None, s), s.sigma[4] * z)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 1000), st.floats(-1, 1), st.floats(0.01, 1.0))
def test_gaussian_optimal_eps_is_posterior_mean(t, mu, sd):
    # E[eps | y] for y = sqrt(ab) x + sqrt(1-ab) eps, x ~ N(mu, sd^2): joint Gaussian regression
    s = build_linear_schedule()
    ab = s.alpha_bar[t - 1]
    y = np.array([0.37])
    cov = math.sqrt(1 - ab)
    var_y = ab * sd * sd + (1 - ab)
    expected = cov / var_y * (y - math.sqrt(ab) * mu)
    assert np.allclose(gaussian_optimal_eps(y, t, s, mu, sd), expected)


def test_gaussian_optimal_eps_recovers_noise_when_data_is_constant():
    s = build_linear_schedule()
    rng = np.random.default_rng(3)
    eps = rng.standard_normal(5)
    yt = forward_diffuse(np.full(5, 0.3), 400, eps, s)
    assert np.allclose(gaussian_optimal_eps(yt, 400, s, 0.3, 0.0), eps)
