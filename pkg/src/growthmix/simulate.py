"""Synthetic paired cohorts for the benchmark study.

Two cohorts are generated from identical child-level draws (group label,
intercept, velocities, observation times and noise); they differ only in
where the change points sit, one regime fixing them for every child and
the other drawing them per child.  This isolates the effect of change-point
heterogeneity on downstream clustering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .knots import KnotVector
from .model import ChildRecord, Cohort, basis_for_knots

# column g is the mean velocity vector of group g; row k is segment k
GROUP_MEAN_VELOCITIES = np.array([
    [-3.0, -7.5, -3.0, 4.0],
    [-3.0, -5.0, -1.0, 1.0],
    [-3.0, 0.0, 3.0, -3.0],
])


@dataclass(frozen=True)
class SimSpec:
    """Data-generating configuration of the benchmark simulation."""

    n_children: int = 400
    horizon: float = 1.0
    n_knots: int = 2
    alpha_mean: float = 0.75
    alpha_var: float = 0.5
    noise_var: float = 0.15
    group_means: np.ndarray = field(
        default_factory=lambda: GROUP_MEAN_VELOCITIES.copy())
    group_cov_scale: float = 0.2
    obs_min: int = 10
    obs_max: int = 20
    fixed_knots: tuple = (1.0 / 3.0, 2.0 / 3.0)

    def __post_init__(self):
        gm = np.asarray(self.group_means, dtype=float)
        if gm.shape[0] != self.n_knots + 1:
            raise ValueError("group_means needs one row per segment")
        object.__setattr__(self, "group_means", gm)

    @property
    def n_groups(self) -> int:
        return self.group_means.shape[1]


@dataclass(frozen=True)
class SimResult:
    """Paired cohorts plus the latent truth used by oracle checks."""

    d_fixed: Cohort
    d_random: Cohort
    s_true: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray         # (N, K+1)
    xi_random: np.ndarray    # (N, K)
    times: list              # per-child observation times
    errors: list             # per-child additive noise


def _random_knots(spec: SimSpec, rng) -> np.ndarray:
    """One knot per subinterval, drawn uniformly on its interior."""
    k, t = spec.n_knots, spec.horizon
    lo = np.arange(k) * t / k
    hi = np.arange(1, k + 1) * t / k
    xi = lo + (hi - lo) * rng.random(k)
    while np.any(xi <= lo) or np.any(xi >= hi):  # boundary hits have measure zero
        xi = lo + (hi - lo) * rng.random(k)
    return xi


def generate_paired_cohorts(spec: SimSpec, seed: int) -> SimResult:
    """Generate the fixed-knot and random-knot cohorts from shared draws."""
    rng = np.random.default_rng(seed)
    n = spec.n_children
    p = spec.n_knots + 1

    groups = rng.integers(0, spec.n_groups, size=n)
    alpha = spec.alpha_mean + np.sqrt(spec.alpha_var) * rng.standard_normal(n)
    beta = (spec.group_means.T[groups]
            + np.sqrt(spec.group_cov_scale) * rng.standard_normal((n, p)))

    xi_fixed = np.asarray(spec.fixed_knots, dtype=float)
    noise_sd = np.sqrt(spec.noise_var)

    children_fixed, children_random = [], []
    xi_random = np.empty((n, spec.n_knots))
    times_all, errors_all = [], []
    for i in range(n):
        j = int(rng.integers(spec.obs_min, spec.obs_max + 1))
        t = np.sort(rng.random(j) * spec.horizon)
        eps = noise_sd * rng.standard_normal(j)
        xi_random[i] = _random_knots(spec, rng)

        b_fixed = basis_for_knots(t, np.tile(xi_fixed, (j, 1)), spec.horizon)
        b_random = basis_for_knots(t, np.tile(xi_random[i], (j, 1)), spec.horizon)
        z_fixed = alpha[i] + b_fixed @ beta[i] + eps
        z_random = alpha[i] + b_random @ beta[i] + eps

        child_id = f"c{i:04d}"
        children_fixed.append(ChildRecord(child_id, t, z_fixed))
        children_random.append(ChildRecord(child_id, t, z_random))
        times_all.append(t)
        errors_all.append(eps)

    d_fixed = Cohort(tuple(children_fixed), spec.horizon, spec.n_knots)
    d_random = Cohort(tuple(children_random), spec.horizon, spec.n_knots)
    return SimResult(d_fixed, d_random, groups, alpha, beta, xi_random,
                     times_all, errors_all)
