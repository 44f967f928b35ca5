"""Child-specific change points: spacing prior and Metropolis-Hastings move.

Each child carries K ordered change points, the k-th confined to the open
subinterval ((k-1)T/K, kT/K).  The prior density is proportional to the
product of consecutive spacings (with endpoints 0 and T), which penalises
change points that crowd together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def subinterval(k: int, n_knots: int, horizon: float) -> tuple[float, float]:
    """Open interval ((k-1)T/K, kT/K) that must contain knot k (1-based)."""
    return ((k - 1) * horizon / n_knots, k * horizon / n_knots)


@dataclass(frozen=True)
class KnotVector:
    """Ordered interior change points with their observation horizon."""

    xi: np.ndarray
    horizon: float

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        k = xi.size
        if k < 1:
            raise ValueError("at least one change point required")
        lo = np.arange(k) * self.horizon / k
        hi = np.arange(1, k + 1) * self.horizon / k
        if not np.all((xi > lo) & (xi < hi)):
            raise ValueError(
                f"each knot k must lie strictly inside ((k-1)T/K, kT/K); got {xi}"
            )
        object.__setattr__(self, "xi", xi)

    @property
    def n_knots(self) -> int:
        return self.xi.size


def spacing_logdensity(xi: np.ndarray, horizon: float) -> float:
    """Unnormalised log prior of a raw knot array; -inf when infeasible.

    The density is the product of the K+1 spacings of (0, xi_1..xi_K, T)
    restricted to one knot per equal-length subinterval.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    k = xi.size
    lo = np.arange(k) * horizon / k
    hi = np.arange(1, k + 1) * horizon / k
    if not np.all((xi > lo) & (xi < hi)):
        return -math.inf
    edges = np.concatenate(([0.0], xi, [horizon]))
    gaps = np.diff(edges)
    if np.any(gaps <= 0.0):
        return -math.inf
    return float(np.sum(np.log(gaps)))


def knot_prior_logdensity(knots) -> float:
    """Log prior (up to a constant) of a KnotVector or raw (xi, horizon) pair."""
    if isinstance(knots, KnotVector):
        return spacing_logdensity(knots.xi, knots.horizon)
    xi, horizon = knots
    return spacing_logdensity(np.asarray(xi, dtype=float), float(horizon))


def equally_spaced_knots(n_knots: int, horizon: float) -> KnotVector:
    """Knots at k*T/(K+1): the conventional fixed-knot placement."""
    xi = np.arange(1, n_knots + 1) * horizon / (n_knots + 1)
    return KnotVector(xi, horizon)


def midpoint_knots(n_knots: int, horizon: float) -> KnotVector:
    """Subinterval midpoints (k - 1/2)T/K; the random-knot initial state."""
    xi = (np.arange(1, n_knots + 1) - 0.5) * horizon / n_knots
    return KnotVector(xi, horizon)


def accept_logratio(ll_new: float, ll_old: float, xi_old: float, xi_new: float,
                    left: float, right: float) -> float:
    """Log MH acceptance ratio for replacing one knot.

    ``left``/``right`` are the neighbouring change points (or 0 / T at the
    ends); only the two spacings adjacent to the moved knot enter the prior
    ratio, the rest cancel.
    """
    prior_new = (right - xi_new) * (xi_new - left)
    prior_old = (right - xi_old) * (xi_old - left)
    return ll_new - ll_old + math.log(prior_new) - math.log(prior_old)


def mh_knot_step(child, reg, k: int, sigma2_eps: float, rng) -> tuple[bool, KnotVector]:
    """One Metropolis-Hastings update of knot k (1-based) for one child.

    Proposes uniformly on the knot's subinterval and accepts with the
    likelihood ratio times the spacing-prior ratio.  Returns the acceptance
    flag and the (possibly unchanged) knot vector.
    """
    from .model import ChildRegression, child_loglik

    kv = reg.knots
    if not 1 <= k <= kv.n_knots:
        raise ValueError(f"knot index {k} out of range 1..{kv.n_knots}")
    lo, hi = subinterval(k, kv.n_knots, kv.horizon)
    proposal = lo + (hi - lo) * rng.random()

    xi = kv.xi
    left = xi[k - 2] if k >= 2 else 0.0
    right = xi[k] if k < kv.n_knots else kv.horizon
    xi_new = xi.copy()
    xi_new[k - 1] = proposal
    kv_new = KnotVector(xi_new, kv.horizon)
    reg_new = ChildRegression(reg.alpha, reg.beta, kv_new)

    logr = accept_logratio(
        child_loglik(child, reg_new, sigma2_eps),
        child_loglik(child, reg, sigma2_eps),
        xi[k - 1], proposal, left, right,
    )
    if math.log(rng.random()) < min(0.0, logr):
        return True, kv_new
    return False, kv


def prior_mh_sample(n_knots: int, horizon: float, n_chains: int, n_steps: int,
                    rng) -> np.ndarray:
    """Run independent flat-likelihood MH chains; returns (n_chains, K) knots.

    With no data the acceptance ratio reduces to the spacing-prior ratio, so
    the chains target the constrained spacing prior exactly.  Chains are
    mutually independent, giving iid samples for distributional tests.
    """
    lo = np.arange(n_knots) * horizon / n_knots
    hi = np.arange(1, n_knots + 1) * horizon / n_knots
    xi = lo + (hi - lo) * rng.random((n_chains, n_knots))
    for _ in range(n_steps):
        for k in range(n_knots):
            prop = lo[k] + (hi[k] - lo[k]) * rng.random(n_chains)
            left = xi[:, k - 1] if k >= 1 else np.zeros(n_chains)
            right = xi[:, k + 1] if k + 1 < n_knots else np.full(n_chains, horizon)
            logr = (np.log((right - prop) * (prop - left))
                    - np.log((right - xi[:, k]) * (xi[:, k] - left)))
            accept = np.log(rng.random(n_chains)) < logr
            xi[accept, k] = prop[accept]
    return xi
