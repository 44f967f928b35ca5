"""Tests for conditional updates, the slice sampler and chain orchestration."""

import math
import warnings

import numpy as np
import pytest

from growthmix.knots import KnotVector, equally_spaced_knots
from growthmix.mcmc import (ChainConfig, PriorConfig, alpha_conditional,
                            beta_conditional, run_chain, slice_sample,
                            update_child_regression, update_globals,
                            update_scale)
from growthmix.model import ChildRecord, Cohort, GlobalParams, basis_matrix
from growthmix.simulate import SimSpec, generate_paired_cohorts


# ------------------------------------------------- child-level conditionals


def test_alpha_conditional_shrinkage_form():
    # same posterior written as a shrinkage-weighted average
    resid_sum, n_obs = 3.4, 7
    mu_a, s2a, s2e = 0.5, 2.0, 0.3
    mean, var = alpha_conditional(resid_sum, n_obs, mu_a, s2a, s2e)
    w = (n_obs / s2e) / (n_obs / s2e + 1.0 / s2a)
    expected = w * (resid_sum / n_obs) + (1 - w) * mu_a
    assert mean == pytest.approx(expected, rel=1e-12)
    assert var == pytest.approx(1.0 / (1.0 / s2a + n_obs / s2e), rel=1e-12)


def test_alpha_conditional_no_observations_is_prior():
    mean, var = alpha_conditional(0.0, 0, 1.2, 4.0, 0.15)
    assert mean == pytest.approx(1.2) and var == pytest.approx(4.0)


def test_beta_conditional_no_observations_is_prior():
    mu = np.array([1.0, -2.0, 0.5])
    sigma = np.diag([0.5, 1.0, 2.0])
    mean, cov = beta_conditional(np.zeros((3, 3)), np.zeros(3), mu, sigma, 0.15)
    assert np.allclose(mean, mu, atol=1e-12)
    assert np.allclose(cov, sigma, atol=1e-12)


def test_beta_conditional_matches_augmented_regression_oracle():
    # oracle: Bayesian linear regression as least squares on rows augmented
    # with a square root of the prior precision (QR route, no inverses)
    rng = np.random.default_rng(0)
    xi = np.array([0.3, 0.7])
    b = basis_matrix([0.15, 0.5, 0.9], xi, 1.0)
    z = np.array([0.2, -0.4, 0.9])
    alpha, s2e = 0.3, 0.15
    mu = np.array([0.5, -1.0, 0.2])
    a_raw = rng.normal(size=(3, 3))
    sigma = a_raw @ a_raw.T + np.eye(3)

    prior_root = np.linalg.cholesky(np.linalg.inv(sigma)).T
    x_aug = np.vstack((b / math.sqrt(s2e), prior_root))
    y_aug = np.concatenate(((z - alpha) / math.sqrt(s2e), prior_root @ mu))
    mean_oracle, *_ = np.linalg.lstsq(x_aug, y_aug, rcond=None)
    q, r = np.linalg.qr(x_aug)
    cov_oracle = np.linalg.solve(r.T @ r, np.eye(3))

    mean, cov = beta_conditional(b.T @ b, b.T @ (z - alpha), mu, sigma, s2e)
    assert np.allclose(mean, mean_oracle, atol=1e-8)
    assert np.allclose(cov, cov_oracle, atol=1e-8)


def test_child_conditional_means_consistent_with_truth():
    # conditional means approach the generator values as J grows; average
    # over independent datasets to beat single-realisation design noise
    xi = equally_spaced_knots(2, 1.0)
    alpha_true, beta_true = 0.6, np.array([-2.0, 1.0, 0.5])
    s2e = 0.09
    alpha_means, beta_means = [], []
    for seed in range(8):
        rng = np.random.default_rng(seed)
        times = np.sort(rng.uniform(0, 1, 5000))
        b = basis_matrix(times, xi, 1.0)
        z = alpha_true + b @ beta_true + math.sqrt(s2e) * rng.standard_normal(5000)
        mean_a, _ = alpha_conditional(float(np.sum(z - b @ beta_true)), 5000,
                                      0.0, 1.0, s2e)
        mean_b, _ = beta_conditional(b.T @ b, b.T @ (z - alpha_true),
                                     np.zeros(3), 10.0 * np.eye(3), s2e)
        alpha_means.append(mean_a)
        beta_means.append(mean_b)
    assert abs(np.mean(alpha_means) - alpha_true) < 0.05
    assert np.all(np.abs(np.mean(beta_means, axis=0) - beta_true) < 0.05)


def test_update_child_regression_uses_both_conditionals():
    rng = np.random.default_rng(2)
    child = ChildRecord("a", [0.1, 0.5, 0.9], [0.4, 0.1, -0.2])
    from growthmix.model import ChildRegression
    reg = ChildRegression(0.2, np.array([0.5, -0.5, 0.0]),
                          equally_spaced_knots(2, 1.0))
    globals_ = GlobalParams(0.3, 2.0, 0.2)
    alpha, beta = update_child_regression(child, reg, np.zeros(3), np.eye(3),
                                          globals_, rng)
    assert np.isfinite(alpha) and beta.shape == (3,)


# ----------------------------------------------------------- global updates


def test_mu_alpha_conditional_concentrates_on_common_value():
    rng = np.random.default_rng(3)
    alpha = np.full(800, 1.7)
    out = np.array([update_globals(alpha, 10.0, 50, 0.05, 0.2,
                                   PriorConfig(), np.random.default_rng(r))[0]
                    for r in range(200)])
    assert abs(out.mean() - 1.7) < 0.02


def test_sigma_eps_stationary_matches_quadrature():
    # fixed 20-residual dataset; compare the slice chain's mean of sigma
    # against 1-D quadrature of the full conditional (within 2%)
    rng = np.random.default_rng(4)
    resid = np.random.default_rng(99).normal(scale=0.4, size=20)
    sse = float(resid @ resid)
    n = resid.size

    grid = np.linspace(1e-4, 60.0, 600_001)
    log_f = (-n * np.log(grid) - 0.5 * sse / grid ** 2
             - np.log1p((grid / 5.0) ** 2))
    f = np.exp(log_f - log_f.max())
    mean_oracle = np.trapezoid(grid * f, grid) / np.trapezoid(f, grid)

    sd = 1.0
    keep = 100_000
    samples = np.empty(keep)
    for i in range(keep):
        sd = update_scale(sd, n, sse, 5.0, rng)
        samples[i] = sd
    assert abs(samples[500:].mean() - mean_oracle) / mean_oracle < 0.02


def test_scale_prior_only_recovers_half_cauchy_quantiles():
    rng = np.random.default_rng(5)
    sd = 1.0
    keep = 200_000
    samples = np.empty(keep)
    for i in range(keep):
        sd = update_scale(sd, 0.0, 0.0, 5.0, rng)
        samples[i] = sd
    for q in (0.25, 0.5, 0.75):
        target = 5.0 * math.tan(0.5 * math.pi * q)
        got = float(np.quantile(samples, q))
        assert abs(got - target) / target < 0.04


def test_slice_sample_standard_normal_target():
    rng = np.random.default_rng(6)
    x = 0.0
    samples = np.empty(50_000)
    for i in range(samples.size):
        x = slice_sample(lambda v: -0.5 * v * v, x, rng)
        samples[i] = x
    assert abs(samples.mean()) < 0.02
    assert abs(samples.std() - 1.0) < 0.02


# ------------------------------------------------------------ orchestration


def _toy_cohort(n=20, seed=0):
    sim = generate_paired_cohorts(SimSpec(n_children=n), seed)
    return sim


def test_run_chain_deterministic():
    sim = _toy_cohort()
    cfg = ChainConfig(iterations=300, burnin=100, thin=4, seed=9,
                      knot_mode="random")
    a = run_chain(sim.d_random, cfg)
    b = run_chain(sim.d_random, cfg)
    for field in ("s", "g", "alpha", "beta", "xi", "mu_alpha", "sigma2_alpha",
                  "sigma2_eps", "lam", "comp_mu", "comp_sigma", "comp_weight",
                  "comp_offsets", "g_trace"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field


def test_run_chain_zero_retained_warns():
    sim = _toy_cohort(n=5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = ChainConfig(iterations=50, burnin=50, thin=4, seed=0,
                          knot_mode="fixed")
        assert any("no draws" in str(w.message) for w in caught)
    out = run_chain(sim.d_fixed, cfg)
    assert out.n_draws == 0 and out.s.shape == (0, 5)


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(iterations=10, burnin=20, thin=1)
    with pytest.raises(ValueError):
        ChainConfig(thin=0)
    with pytest.raises(ValueError):
        ChainConfig(knot_mode="sometimes")
    with pytest.raises(ValueError):
        ChainConfig(init="kmeans")
    assert ChainConfig(iterations=200, burnin=100, thin=20).n_retained == 5


def test_single_component_data_recovers_g_mode_one():
    rng = np.random.default_rng(7)
    children = []
    for i in range(100):
        j = int(rng.integers(10, 21))
        t = np.sort(rng.uniform(0, 1, j))
        b = basis_matrix(t, [1 / 3, 2 / 3], 1.0)
        beta = np.array([-2.0, 1.0, 0.0]) + math.sqrt(0.2) * rng.standard_normal(3)
        z = 0.75 + rng.standard_normal() * math.sqrt(0.5) + b @ beta \
            + math.sqrt(0.15) * rng.standard_normal(j)
        children.append(ChildRecord(f"c{i}", t, z))
    cohort = Cohort(tuple(children), 1.0, 2)
    cfg = ChainConfig(iterations=4000, burnin=2000, thin=10, seed=1,
                      knot_mode="fixed", fixed_knots=(1 / 3, 2 / 3))
    out = run_chain(cohort, cfg)
    assert out.g_mode() == 1


def test_run_chain_invariants_and_diagnostics():
    sim = _toy_cohort(n=15, seed=3)
    cfg = ChainConfig(iterations=400, burnin=200, thin=5, seed=2,
                      knot_mode="random")
    out = run_chain(sim.d_random, cfg)
    assert out.n_draws == 40
    assert np.all(out.sigma2_eps > 0) and np.all(out.sigma2_alpha > 0)
    assert np.all(out.lam > 0)
    lo = np.arange(2) * 0.5
    hi = lo + 0.5
    assert np.all((out.xi > lo) & (out.xi < hi))
    assert np.all((out.knot_accept >= 0) & (out.knot_accept <= 1))
    # canonical labels: first occurrence order, contiguous
    for row in out.s[:5]:
        seen = []
        for lab in row:
            if lab not in seen:
                assert lab == len(seen)
                seen.append(lab)
    # component rows align with the number of occupied components per draw
    assert np.array_equal(np.diff(out.comp_offsets), out.g)


def test_fixed_knot_chain_has_nan_acceptance():
    sim = _toy_cohort(n=8, seed=4)
    cfg = ChainConfig(iterations=60, burnin=30, thin=3, seed=0,
                      knot_mode="fixed")
    out = run_chain(sim.d_fixed, cfg)
    assert np.all(np.isnan(out.knot_accept))
    assert np.allclose(out.xi[:, :, 0], 1 / 3)
