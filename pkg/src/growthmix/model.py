"""Broken-stick trajectory model: cohort containers, segment basis and
Gaussian likelihood.

A trajectory is continuous piecewise-linear on [0, T] with breaks at K
change points.  The regression is parameterised so that coefficient k is
the slope of segment k, which makes the coefficient vector directly
interpretable as a growth-velocity vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .knots import KnotVector

LOG_2PI = math.log(2.0 * math.pi)


def _knot_array(knots) -> np.ndarray:
    """Accept a KnotVector or a bare array of change points."""
    xi = getattr(knots, "xi", knots)
    return np.atleast_1d(np.asarray(xi, dtype=float))


def basis_row(t: float, knots, horizon: float) -> np.ndarray:
    """Segment-occupancy basis b(t) of length K+1.

    Entry k is the amount of time in [0, t] spent inside segment k, i.e.
    ``max(0, min(t, xi_{k+1}) - xi_k)`` with xi_0 = 0 and xi_{K+1} = T, so
    the trajectory value is ``alpha + beta @ b(t)`` and the derivative
    inside segment k is beta_k.

    Parameters
    ----------
    t : float
        Age in years, must lie in [0, horizon].
    knots : KnotVector or array-like
        Ordered interior change points (length K).
    horizon : float
        End of the observation window T.

    Returns
    -------
    ndarray of shape (K+1,)
    """
    t = float(t)
    if not 0.0 <= t <= horizon:
        raise ValueError(f"age {t} outside [0, {horizon}]")
    xi = _knot_array(knots)
    edges = np.concatenate(([0.0], xi, [horizon]))
    return np.maximum(0.0, np.minimum(t, edges[1:]) - edges[:-1])


def basis_matrix(times, knots, horizon: float) -> np.ndarray:
    """Stack basis rows for several ages sharing one knot vector.

    Returns an (n, K+1) matrix; see :func:`basis_row`.
    """
    t = np.asarray(times, dtype=float)
    if t.size and (t.min() < 0.0 or t.max() > horizon):
        raise ValueError("some ages fall outside [0, horizon]")
    xi = _knot_array(knots)
    edges = np.concatenate(([0.0], xi, [horizon]))
    return np.maximum(0.0, np.minimum(t[:, None], edges[1:]) - edges[:-1])


def basis_for_knots(times, xi_rows: np.ndarray, horizon: float) -> np.ndarray:
    """Basis rows where every observation carries its own knot vector.

    ``times`` has shape (M,), ``xi_rows`` shape (M, K); used on the flat
    per-observation layout where row m belongs to some child whose current
    knots are ``xi_rows[m]``.
    """
    t = np.asarray(times, dtype=float)
    m = t.shape[0]
    lo = np.concatenate((np.zeros((m, 1)), xi_rows), axis=1)
    hi = np.concatenate((xi_rows, np.full((m, 1), horizon)), axis=1)
    return np.maximum(0.0, np.minimum(t[:, None], hi) - lo)


@dataclass(frozen=True)
class ChildRecord:
    """Observation history for one child: ages (years) and HAZ z-scores."""

    child_id: str
    times: np.ndarray
    haz: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        haz = np.asarray(self.haz, dtype=float)
        if times.ndim != 1 or haz.shape != times.shape:
            raise ValueError(f"child {self.child_id}: times/haz must be 1-d and equal length")
        if times.size < 1:
            raise ValueError(f"child {self.child_id}: needs at least one observation")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(haz))):
            raise ValueError(f"child {self.child_id}: non-finite observation")
        if np.any(np.diff(times) < 0):
            # rows arrive unsorted from CSV; sort jointly by age
            order = np.argsort(times, kind="stable")
            times = times[order]
            haz = haz[order]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "haz", haz)

    @property
    def n_obs(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class Cohort:
    """A set of children observed on [0, horizon] with K change points."""

    children: tuple
    horizon: float
    n_knots: int

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 1:
            raise ValueError("cohort must contain at least one child")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.n_knots < 1:
            raise ValueError("n_knots must be a positive integer")
        for ch in self.children:
            # ages exactly 0 or horizon are accepted, strictly outside rejected
            if ch.times[0] < 0.0 or ch.times[-1] > self.horizon:
                raise ValueError(
                    f"child {ch.child_id}: ages outside [0, {self.horizon}]"
                )

    @property
    def n_children(self) -> int:
        return len(self.children)

    def packed(self) -> "PackedCohort":
        """Flat per-observation layout used by the vectorised sampler."""
        counts = np.array([ch.n_obs for ch in self.children], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        times = np.concatenate([ch.times for ch in self.children])
        haz = np.concatenate([ch.haz for ch in self.children])
        child_index = np.repeat(np.arange(len(self.children)), counts)
        ids = tuple(ch.child_id for ch in self.children)
        return PackedCohort(times, haz, offsets, child_index, counts, ids,
                            self.horizon, self.n_knots)


@dataclass(frozen=True)
class PackedCohort:
    """Concatenated observation arrays with per-child offsets."""

    times: np.ndarray        # (M,)
    haz: np.ndarray          # (M,)
    offsets: np.ndarray      # (N+1,) starts of each child's block
    child_index: np.ndarray  # (M,) owning child of each observation
    counts: np.ndarray       # (N,) observations per child
    ids: tuple
    horizon: float
    n_knots: int

    @property
    def n_children(self) -> int:
        return self.counts.size

    def segment_sum(self, values: np.ndarray) -> np.ndarray:
        """Per-child sums of a per-observation vector."""
        return np.add.reduceat(values, self.offsets[:-1])


@dataclass(frozen=True)
class ChildRegression:
    """Per-child trajectory parameters: intercept, slopes, change points."""

    alpha: float
    beta: np.ndarray
    knots: "KnotVector"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        k = _knot_array(self.knots).size
        if beta.shape != (k + 1,):
            raise ValueError(f"beta must have length {k + 1}, got {beta.shape}")
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class GlobalParams:
    """Population intercept mean and the two model variances."""

    mu_alpha: float
    sigma2_alpha: float
    sigma2_eps: float

    def __post_init__(self):
        if not (self.sigma2_alpha > 0 and self.sigma2_eps > 0):
            raise ValueError("variances must be strictly positive")


def trajectory_eval(reg: ChildRegression, t) -> float | np.ndarray:
    """Evaluate the piecewise-linear trajectory at age(s) t."""
    horizon = getattr(reg.knots, "horizon")
    if np.isscalar(t):
        return float(reg.alpha + basis_row(t, reg.knots, horizon) @ reg.beta)
    return reg.alpha + basis_matrix(t, reg.knots, horizon) @ reg.beta


def gaussian_loglik(residuals: np.ndarray, sigma2: float) -> float:
    """Sum of iid N(0, sigma2) log-densities."""
    r = np.asarray(residuals, dtype=float)
    return float(-0.5 * r.size * (LOG_2PI + math.log(sigma2))
                 - 0.5 * np.dot(r, r) / sigma2)


def child_loglik(child: ChildRecord, reg: ChildRegression, sigma2_eps: float) -> float:
    """Gaussian log-likelihood of one child's observations under ``reg``."""
    if not sigma2_eps > 0:
        raise ValueError("sigma2_eps must be strictly positive")
    fitted = trajectory_eval(reg, child.times)
    return gaussian_loglik(child.haz - fitted, sigma2_eps)
