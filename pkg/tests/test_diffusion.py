import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vidinpaint.diffusion import (forward_diffuse, make_schedule, posterior_mean, reverse_step,
                                  standard_normal)


@pytest.fixture(scope="module")
def sched():
    return make_schedule(1000, 1e-4, 0.02)


def test_endpoints(sched):
    assert sched.beta[1] == pytest.approx(1e-4, abs=1e-18)
    assert sched.beta[1000] == pytest.approx(0.02, abs=1e-17)
    assert sched.alpha[1] == pytest.approx(0.9999, abs=1e-15)
    assert sched.beta[500] == pytest.approx(0.0001 + (499 / 999) * (0.02 - 0.0001), rel=1e-13)


def test_invariants(sched):
    b = sched.beta[1:]
    assert np.all(np.diff(b) > 0)
    ab = sched.alpha_bar
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab <= 1))
    assert ab[1000] < 1e-3
    assert sched.sigma2[1] == 0.0
    assert np.all((sched.sigma2[1:] >= 0) & (sched.sigma2[1:] <= b))


def test_alpha_bar_matches_high_precision_product(sched):
    mpmath.mp.dps = 40
    prod = mpmath.mpf(1)
    for t in range(1, 1001):
        beta = mpmath.mpf(1e-4) + (t - 1) * (mpmath.mpf(0.02) - mpmath.mpf(1e-4)) / 999
        prod *= 1 - beta
        assert abs(sched.alpha_bar[t] - float(prod)) / float(prod) < 1e-12


def test_invalid_endpoints():
    with pytest.raises(ValueError):
        make_schedule(1000, 0.02, 1e-4)
    with pytest.raises(ValueError):
        make_schedule(1, 1e-4, 0.02)
    with pytest.raises(ValueError):
        make_schedule(10, 0.0, 0.02)


def test_tables_are_read_only(sched):
    with pytest.raises(ValueError):
        sched.beta[3] = 0.5


def test_forward_special_cases(sched):
    x0 = torch.randn(2, 8, 8, 3)
    eps = torch.randn(2, 8, 8, 3)
    t = 321
    ab = sched.alpha_bar[t]
    assert torch.allclose(forward_diffuse(x0, t, torch.zeros_like(x0), sched), math.sqrt(ab) * x0)
    assert torch.allclose(forward_diffuse(torch.zeros_like(x0), t, eps, sched), math.sqrt(1 - ab) * eps)
    with pytest.raises(ValueError):
        forward_diffuse(x0, 0, eps, sched)
    with pytest.raises(ValueError):
        forward_diffuse(x0, 1001, eps, sched)


def test_forward_scalar_probe():
    # a 2-step schedule whose alpha_bar[2] is 0.25: alpha = (1 - b1)(1 - b2)
    b1 = 0.2
    b2 = 1 - 0.25 / (1 - b1)
    s = make_schedule(2, b1, b2)
    assert s.alpha_bar[2] == pytest.approx(0.25, abs=1e-15)
    out = forward_diffuse(torch.tensor([1.0], dtype=torch.float64), 2, torch.tensor([1.0], dtype=torch.float64), s)
    assert out.item() == pytest.approx(0.5 + math.sqrt(0.75), abs=1e-12)
    assert out.item() == pytest.approx(1.3660, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(t=st.integers(1, 1000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_forward_is_linear(t, a, b):
    sched = make_schedule()
    g = torch.Generator().manual_seed(t)
    x1, x2, e1, e2 = (torch.randn(4, dtype=torch.float64, generator=g) for _ in range(4))
    lhs = forward_diffuse(a * x1 + b * x2, t, a * e1 + b * e2, sched)
    rhs = a * forward_diffuse(x1, t, e1, sched) + b * forward_diffuse(x2, t, e2, sched)
    assert torch.allclose(lhs, rhs, atol=1e-10)


def _ddpm_posterior(x0, xt, t, beta_1=1e-4, beta_T=0.02, T=1000):
    # independent recomputation of q(x_{t-1} | x_t, x0) from scratch
    betas = [beta_1 + (beta_T - beta_1) * i / (T - 1) for i in range(T)]
    abar = 1.0
    abar_prev = 1.0
    for i in range(t):
        abar_prev = abar
        abar *= 1 - betas[i]
    beta = betas[t - 1]
    w0 = math.sqrt(abar_prev) * beta / (1 - abar)
    wt = math.sqrt(1 - beta) * (1 - abar_prev) / (1 - abar)
    return w0 * x0 + wt * xt


def test_posterior_mean_final_step_identity(sched):
    x_hat0, xt = torch.randn(3, 4, 4, 3), torch.randn(3, 4, 4, 3)
    assert torch.equal(posterior_mean(x_hat0, xt, 1, sched), x_hat0)


def test_posterior_mean_constant(sched):
    t, c = 400, 0.7
    ab, abp, b = sched.alpha_bar[t], sched.alpha_bar[t - 1], sched.beta[t]
    expected = c * (math.sqrt(abp) * b + math.sqrt(1 - b) * (1 - abp)) / (1 - ab)
    x = torch.full((5,), c, dtype=torch.float64)
    assert torch.allclose(posterior_mean(x, x, t, sched), torch.full((5,), expected, dtype=torch.float64))


def test_posterior_mean_matches_independent_oracle(sched):
    rng = np.random.default_rng(7)
    for t in rng.integers(2, 1001, size=10):
        x0, xt = rng.standard_normal(2)
        got = posterior_mean(torch.tensor(x0, dtype=torch.float64), torch.tensor(xt, dtype=torch.float64), int(t), sched)
        assert got.item() == pytest.approx(_ddpm_posterior(x0, xt, int(t)), rel=1e-10, abs=1e-12)


def test_reverse_step_final_is_clamped_prediction(sched):
    rng = np.random.default_rng(0)
    x_hat0 = torch.randn(2, 8, 8, 3) * 2
    out = reverse_step(torch.randn(2, 8, 8, 3), x_hat0, 1, sched, rng)
    assert torch.equal(out, x_hat0.clamp(-1, 1))


def test_reverse_step_degenerate_variance_is_deterministic(sched):
    # a schedule copy with sigma2 forced to zero
    import dataclasses
    zero = dataclasses.replace(sched, sigma2=np.zeros_like(sched.sigma2))
    x_t, x_hat0 = torch.randn(4, 4, 3), torch.rand(4, 4, 3) * 2 - 1
    a = reverse_step(x_t, x_hat0, 500, zero, np.random.default_rng(1))
    b = reverse_step(x_t, x_hat0, 500, zero, np.random.default_rng(2))
    assert torch.equal(a, b)
    assert torch.equal(a, posterior_mean(x_hat0, x_t, 500, zero))


def test_reverse_step_variance_monte_carlo(sched):
    t = 600
    rng = np.random.default_rng(3)
    x_t = torch.zeros(10_000, dtype=torch.float64)
    x_hat0 = torch.full((10_000,), 0.3, dtype=torch.float64)
    out = reverse_step(x_t, x_hat0, t, sched, rng)
    resid = out - posterior_mean(x_hat0, x_t, t, sched)
    assert resid.var().item() == pytest.approx(sched.sigma2[t], rel=0.05)


def test_reverse_step_same_stream_bit_identical(sched):
    x_t, x_hat0 = torch.randn(2, 4, 4, 3), torch.randn(2, 4, 4, 3)
    a = reverse_step(x_t, x_hat0, 77, sched, np.random.default_rng(11))
    b = reverse_step(x_t, x_hat0, 77, sched, np.random.default_rng(11))
    assert torch.equal(a, b)


def test_oracle_chain_returns_x0(sched):
    rng = np.random.default_rng(0)
    x0 = torch.rand(4, 16, 16, 3) * 2 - 1
    x = standard_normal(x0.shape, rng)
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, x0, t, sched, rng)
    assert (x - x0).abs().max().item() <= 1e-5


def test_batched_noise_per_generator():
    gens = [np.random.default_rng(1), np.random.default_rng(2)]
    batch = standard_normal((2, 3, 4), gens)
    assert torch.equal(batch[0], standard_normal((3, 4), np.random.default_rng(1)))
    assert torch.equal(batch[1], standard_normal((3, 4), np.random.default_rng(2)))
    with pytest.raises(ValueError):
        standard_normal((3, 3), gens)
