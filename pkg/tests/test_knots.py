"""Tests for the change-point prior and its Metropolis-Hastings move."""

import math

import numpy as np
import pytest

from growthmix.knots import (KnotVector, accept_logratio, equally_spaced_knots,
                             knot_prior_logdensity, mh_knot_step,
                             midpoint_knots, prior_mh_sample, subinterval)
from growthmix.model import ChildRecord, ChildRegression


def test_knot_vector_constraint():
    KnotVector([0.2], 1.0)
    KnotVector([0.25, 0.7], 1.0)
    with pytest.raises(ValueError):
        KnotVector([0.6, 0.9], 1.0)  # first knot outside (0, 0.5)
    with pytest.raises(ValueError):
        KnotVector([0.5, 0.7], 1.0)  # subinterval boundary is excluded


def test_prior_logdensity_single_knot():
    assert knot_prior_logdensity(KnotVector([0.5], 1.0)) == pytest.approx(
        math.log(0.25), abs=1e-12)
    value = knot_prior_logdensity(([0.5], 1.0))  # raw pair form
    assert value == pytest.approx(math.log(0.25), abs=1e-12)


def test_prior_density_ratio_hand_value():
    # p(0.5)/p(0.25) = 0.25 / 0.1875 = 4/3 for K=1, T=1
    num = knot_prior_logdensity(([0.5], 1.0))
    den = knot_prior_logdensity(([0.25], 1.0))
    assert math.exp(num - den) == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_prior_logdensity_infeasible_is_minus_inf():
    assert knot_prior_logdensity(([0.6, 0.9], 1.0)) == -math.inf
    assert knot_prior_logdensity(([0.9, 0.4], 1.0)) == -math.inf


def test_default_placements_satisfy_constraint():
    for k in range(1, 6):
        for horizon in (1.0, 2.5):
            eq = equally_spaced_knots(k, horizon)
            mid = midpoint_knots(k, horizon)
            assert knot_prior_logdensity(eq) > -math.inf
            assert knot_prior_logdensity(mid) > -math.inf
    assert np.allclose(equally_spaced_knots(2, 1.0).xi, [1 / 3, 2 / 3])


def test_accept_logratio_identical_proposal_is_zero():
    assert accept_logratio(-3.7, -3.7, 0.25, 0.25, 0.0, 1.0) == pytest.approx(0.0)


def test_accept_logratio_flat_likelihood_prior_ratio():
    # K=1, T=1, current 0.25 -> proposal 0.5: min(1, 4/3) = 1
    logr = accept_logratio(0.0, 0.0, 0.25, 0.5, 0.0, 1.0)
    assert math.exp(logr) == pytest.approx(4.0 / 3.0, abs=1e-12)
    assert min(1.0, math.exp(logr)) == 1.0


def test_mh_knot_step_moves_and_respects_constraint():
    rng = np.random.default_rng(5)
    child = ChildRecord("a", np.linspace(0.05, 0.95, 12),
                        np.linspace(0.5, -1.0, 12))
    reg = ChildRegression(0.2, np.array([1.0, -0.5, 0.3]),
                          midpoint_knots(2, 1.0))
    accepted = 0
    for _ in range(200):
        for k in (1, 2):
            ok, kv = mh_knot_step(child, reg, k, 0.2, rng)
            accepted += ok
            lo, hi = subinterval(k, 2, 1.0)
            assert lo < kv.xi[k - 1] < hi
            reg = ChildRegression(reg.alpha, reg.beta, kv)
    assert 0 < accepted < 400


def test_mh_knot_step_bad_index():
    child = ChildRecord("a", [0.5], [0.0])
    reg = ChildRegression(0.0, np.zeros(3), midpoint_knots(2, 1.0))
    with pytest.raises(ValueError):
        mh_knot_step(child, reg, 3, 1.0, np.random.default_rng(0))


def _spacing_marginal_cdf(k_index: int, n_knots: int, horizon: float,
                          n_grid: int = 4001):
    """Quadrature oracle: marginal CDF of knot k under the spacing prior."""
    grids = [np.linspace(lo, hi, n_grid)
             for lo, hi in (subinterval(k + 1, n_knots, horizon)
                            for k in range(n_knots))]
    if n_knots == 1:
        x = grids[0]
        dens = x * (horizon - x)
    elif n_knots == 2:
        x0, x1 = np.meshgrid(grids[0], grids[1], indexing="ij")
        joint = x0 * (x1 - x0) * (horizon - x1)
        if k_index == 0:
            dens = np.trapezoid(joint, grids[1], axis=1)
            x = grids[0]
        else:
            dens = np.trapezoid(joint, grids[0], axis=0)
            x = grids[1]
    else:
        raise NotImplementedError
    cdf = np.concatenate(([0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(x))))
    cdf /= cdf[-1]
    return x, cdf


def test_flat_likelihood_stationary_matches_prior_k1():
    from scipy.stats import kstest

    rng = np.random.default_rng(17)
    samples = prior_mh_sample(1, 1.0, 20_000, 60, rng)[:, 0]
    x, cdf = _spacing_marginal_cdf(0, 1, 1.0)
    result = kstest(samples, lambda q: np.interp(q, x, cdf))
    assert result.pvalue > 0.01


def test_flat_likelihood_stationary_matches_prior_k2():
    from scipy.stats import kstest

    rng = np.random.default_rng(23)
    samples = prior_mh_sample(2, 1.0, 20_000, 60, rng)
    for k in range(2):
        x, cdf = _spacing_marginal_cdf(k, 2, 1.0)
        result = kstest(samples[:, k], lambda q: np.interp(q, x, cdf))
        assert result.pvalue > 0.01
