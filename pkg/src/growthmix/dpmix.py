"""Dirichlet-process mixture over velocity vectors.

Components carry a Gaussian (mean, covariance) pair drawn from a
normal-inverse-Wishart base distribution.  The state keeps only the
occupied components plus the leftover stick mass; slice variables bound
the set of components a child can move to, so every update touches a
finite mixture.  All likelihood arithmetic stays in log space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# guard against Beta/Gamma draws underflowing to exact 0 in log updates
_TINY = 1e-300


@dataclass(frozen=True)
class NIWParams:
    """Normal-inverse-Wishart parameters (m, c, nu, Psi)."""

    m: np.ndarray
    c: float
    nu: float
    psi: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        psi = np.asarray(self.psi, dtype=float)
        p = m.size
        if psi.shape != (p, p):
            raise ValueError("Psi must be square and match the mean dimension")
        if not self.c > 0:
            raise ValueError("precision scalar c must be positive")
        if not self.nu > p - 1:
            raise ValueError(f"need nu > {p - 1} for a proper distribution")
        np.linalg.cholesky(0.5 * (psi + psi.T))  # SPD check
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "psi", psi)

    @property
    def dim(self) -> int:
        return self.m.size


@dataclass(frozen=True)
class Component:
    """Read-only view of one mixture component."""

    mu: np.ndarray
    sigma: np.ndarray
    members: frozenset
    weight: float

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class MixtureState:
    """Occupied components, leftover mass, slices and allocations.

    ``weights``/``mus``/``sigmas``/``chols`` are stacked over components in
    creation order; ``remainder`` is the unallocated stick mass; ``alloc``
    maps children to component indices and ``slices`` holds the per-child
    auxiliary uniforms.
    """

    weights: np.ndarray      # (G,)
    mus: np.ndarray          # (G, P)
    sigmas: np.ndarray       # (G, P, P)
    chols: np.ndarray        # (G, P, P) lower Cholesky factors of sigmas
    remainder: float
    lam: float               # DP concentration
    alloc: np.ndarray        # (N,) int
    slices: np.ndarray       # (N,) float

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def n_children(self) -> int:
        return self.alloc.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.alloc, minlength=self.n_components)

    def components(self) -> list[Component]:
        """Materialise per-component views (bookkeeping order)."""
        out = []
        for g in range(self.n_components):
            members = frozenset(np.flatnonzero(self.alloc == g).tolist())
            out.append(Component(self.mus[g].copy(), self.sigmas[g].copy(),
                                 members, float(self.weights[g])))
        return out

    def check(self, atol: float = 1e-12, include_slices: bool = True) -> None:
        """Raise if a structural invariant is violated.

        The slice bound ``u_i <= weight[s_i]`` only holds between the slice
        draw and the weight redraw of a sweep (slices are refreshed from
        their exact conditional each sweep); pass ``include_slices=False``
        when checking at other times.
        """
        total = self.weights.sum() + self.remainder
        if abs(total - 1.0) > atol:
            raise AssertionError(f"weights + remainder = {total}, expected 1")
        if self.alloc.min() < 0 or self.alloc.max() >= self.n_components:
            raise AssertionError("allocation points at a missing component")
        if include_slices and np.any(self.slices > self.weights[self.alloc]):
            raise AssertionError("slice variable exceeds its component weight")


def expected_components(lam: float, n: int) -> float:
    """Large-sample mean number of occupied clusters, lam*log(1 + n/lam)."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if n == 0:
        return 0.0
    return lam * math.log1p(n / lam)


def crp_prior_simulate(lam: float, n: int, rng) -> np.ndarray:
    """Sample a partition of n items from the urn scheme.

    Item i joins an existing cluster with probability proportional to its
    size or opens a new one with probability proportional to ``lam``.
    Size-biased choice of an existing cluster is implemented by copying the
    label of a uniformly chosen earlier item.  Labels are 0-based in order
    of first appearance.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    new_cluster = rng.random(n) * (lam + np.arange(n)) < lam
    donor = (rng.random(n) * np.arange(n)).astype(np.int64)
    labels = np.empty(n, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if new_cluster[i]:
            labels[i] = next_label
            next_label += 1
        else:
            labels[i] = labels[donor[i]]
    return labels


def niw_draw(params: NIWParams, rng) -> tuple[np.ndarray, np.ndarray]:
    """One (mu, Sigma) draw via the Bartlett factorisation.

    The inverse-Wishart part never forms an explicit matrix inverse: with
    A the Bartlett factor and L the Cholesky factor of Psi, Sigma = X^T X
    where X solves A X = L^T.
    """
    p = params.dim
    a = np.zeros((p, p))
    df = params.nu - np.arange(p)
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df))
    a[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    l_psi = _chol_spd(params.psi)
    x = solve_triangular(a, l_psi.T, lower=True)
    sigma = x.T @ x
    mu = params.m + (x.T @ rng.standard_normal(p)) / math.sqrt(params.c)
    return mu, sigma


def niw_posterior_params(prior: NIWParams, velocities: np.ndarray) -> NIWParams:
    """Conjugate NIW update given observed velocity vectors (n, P)."""
    x = np.asarray(velocities, dtype=float).reshape(-1, prior.dim)
    n = x.shape[0]
    if n == 0:
        return prior
    xbar = x.mean(axis=0)
    centered = x - xbar
    scatter = centered.T @ centered
    c_n = prior.c + n
    dm = xbar - prior.m
    psi_n = prior.psi + scatter + (prior.c * n / c_n) * np.outer(dm, dm)
    m_n = (prior.c * prior.m + n * xbar) / c_n
    return NIWParams(m_n, c_n, prior.nu + n, _nearest_spd(psi_n))


def niw_posterior_draw(prior: NIWParams, velocities, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw (mu, Sigma) from the conjugate posterior; the prior when empty."""
    return niw_draw(niw_posterior_params(prior, np.asarray(velocities, dtype=float)
                                         if len(velocities) else
                                         np.empty((0, prior.dim))), rng)


def _chol_spd(mat: np.ndarray) -> np.ndarray:
    """Cholesky factor with a one-shot symmetrise-and-jitter fallback."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        fixed = _nearest_spd(mat, force=True)
        return np.linalg.cholesky(fixed)


def _nearest_spd(mat: np.ndarray, force: bool = False) -> np.ndarray:
    """Symmetrise, and jitter by 1e-10 * trace if factorisation fails."""
    sym = 0.5 * (mat + mat.T)
    if not force:
        try:
            np.linalg.cholesky(sym)
            return sym
        except np.linalg.LinAlgError:
            pass
    jitter = 1e-10 * np.trace(sym)
    logger.warning("scale matrix not SPD after update; adding jitter %.3e", jitter)
    return sym + jitter * np.eye(sym.shape[0])


def stick_breaking_extend(state: MixtureState, u_min: float, rng,
                          prior: NIWParams) -> MixtureState:
    """Append fresh empty components until the leftover mass drops below u_min.

    Each break takes a Beta(1, lam) fraction of the remainder and pairs it
    with an independent draw from the base distribution, so components a
    slice could reach are all explicitly represented.
    """
    if not 0.0 < u_min <= 1.0:
        raise ValueError("u_min must lie in (0, 1]")
    if state.remainder < u_min:
        return state
    # bounds the number of sticks appended in one call; breaching it means
    # a pathologically tiny slice, which should surface, not silently truncate
    cap = int(10 * expected_components(state.lam, state.n_children)) + 100
    new_w, new_mu, new_sigma, new_chol = [], [], [], []
    remainder = state.remainder
    while remainder >= u_min:
        if len(new_w) >= cap:
            raise RuntimeError(
                f"stick-breaking extension exceeded the safety cap of {cap} "
                f"components (remainder {remainder:.3e}, u_min {u_min:.3e})"
            )
        frac = rng.beta(1.0, state.lam)
        new_w.append(frac * remainder)
        remainder *= 1.0 - frac
        mu, sigma = niw_draw(prior, rng)
        new_mu.append(mu)
        new_sigma.append(sigma)
        new_chol.append(np.linalg.cholesky(sigma))
    state.weights = np.concatenate((state.weights, new_w))
    state.mus = np.concatenate((state.mus, np.asarray(new_mu)))
    state.sigmas = np.concatenate((state.sigmas, np.asarray(new_sigma)))
    state.chols = np.concatenate((state.chols, np.asarray(new_chol)))
    state.remainder = remainder
    return state


def sample_allocation(i: int, logliks: np.ndarray, state: MixtureState, rng) -> int:
    """Resample the component label of child i among eligible components.

    Eligible components are those whose weight exceeds the child's slice;
    among them the probability of component g is softmax(loglik_g).
    """
    eligible = state.weights > state.slices[i]
    if not np.any(eligible):
        raise AssertionError(f"child {i}: no component with weight above its slice")
    ll = np.where(eligible, logliks, -np.inf)
    return int(_categorical_rows(ll[None, :], rng.random(1))[0])


def sample_allocations(loglik: np.ndarray, weights: np.ndarray, slices: np.ndarray,
                       rng) -> np.ndarray:
    """Vectorised allocation resampling for all children at once.

    ``loglik`` is (N, G); entry (i, g) is the log density of child i's
    velocity under component g.  Ineligible components are masked to -inf.
    """
    masked = np.where(weights[None, :] > slices[:, None], loglik, -np.inf)
    if np.any(np.all(np.isinf(masked), axis=1)):
        raise AssertionError("a child has an empty eligible component set")
    return _categorical_rows(masked, rng.random(masked.shape[0]))


def _categorical_rows(logp: np.ndarray, unit: np.ndarray) -> np.ndarray:
    """Draw one index per row of unnormalised log probabilities."""
    top = logp.max(axis=1, keepdims=True)
    p = np.exp(logp - top)
    cum = np.cumsum(p, axis=1)
    r = unit * cum[:, -1]
    return np.argmax(cum > r[:, None], axis=1)


def component_logliks(beta: np.ndarray, mus: np.ndarray, chols: np.ndarray) -> np.ndarray:
    """Gaussian log density of each row of beta under every component.

    Returns an (N, G) matrix computed from cached Cholesky factors.
    """
    n, p = beta.shape
    g = mus.shape[0]
    out = np.empty((n, g))
    for j in range(g):
        diff = beta - mus[j]
        y = solve_triangular(chols[j], diff.T, lower=True)
        logdet = np.sum(np.log(np.diag(chols[j])))
        out[:, j] = -0.5 * np.einsum("pn,pn->n", y, y) - logdet - 0.5 * p * LOG_2PI
    return out


def resample_weights(counts: np.ndarray, lam: float, rng) -> tuple[np.ndarray, float]:
    """Dirichlet(counts..., lam) draw over occupied weights and the remainder."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 1):
        raise ValueError("all components must be occupied; remove empties first")
    if not lam > 0:
        raise ValueError("lam must be positive")
    draw = rng.dirichlet(np.concatenate((counts, [lam])))
    return draw[:-1], float(draw[-1])


def resample_concentration(lam: float, n_occupied: int, n: int,
                           prior_shape: float, prior_rate: float, rng) -> float:
    """Two-stage Gibbs update of the concentration parameter.

    A latent Beta(lam, n) variable c is drawn first, then lam from
    Gamma(prior_shape + G, prior_rate - log c).
    """
    if not (lam > 0 and n_occupied >= 1 and n >= 1):
        raise ValueError("need lam > 0, G >= 1, N >= 1")
    c = min(max(rng.beta(lam, n), _TINY), 1.0 - 1e-16)
    rate = prior_rate - math.log(c)
    return float(rng.gamma(prior_shape + n_occupied, 1.0 / rate))


def remove_empty_components(state: MixtureState) -> MixtureState:
    """Drop unoccupied components, folding their weight into the remainder.

    Surviving components keep their creation order and allocations are
    re-indexed to stay contiguous.
    """
    counts = state.counts()
    keep = counts > 0
    if np.all(keep):
        return state
    state.remainder += float(state.weights[~keep].sum())
    new_index = np.cumsum(keep) - 1
    state.alloc = new_index[state.alloc]
    state.weights = state.weights[keep]
    state.mus = state.mus[keep]
    state.sigmas = state.sigmas[keep]
    state.chols = state.chols[keep]
    return state
