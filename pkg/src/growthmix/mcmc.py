"""Gibbs/Metropolis sweep over all latent variables and chain orchestration.

One sweep updates, in order: slice variables, stick-breaking extension,
allocations, empty-component removal, mixture weights, component
parameters, the concentration parameter, per-child intercept and velocity
vectors, per-child change points (random-knot mode only) and the global
parameters.  Children are updated through flat per-observation arrays so a
sweep is a fixed sequence of vectorised operations, which also makes runs
bit-reproducible for a given seed.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from . import dpmix
from .dpmix import MixtureState, NIWParams
from .knots import KnotVector, equally_spaced_knots, midpoint_knots
from .model import Cohort, PackedCohort, basis_for_knots

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the weakly informative priors."""

    mu_alpha_mean: float = 0.0
    mu_alpha_var: float = 25.0
    sigma_alpha_scale: float = 5.0   # half-Cauchy scale on the sd
    sigma_eps_scale: float = 5.0
    lambda_shape: float = 2.0
    lambda_rate: float = 4.0
    niw: NIWParams | None = None     # None: (0, 1e-3, K+2, I) at chain start

    def resolve_niw(self, n_knots: int) -> NIWParams:
        if self.niw is not None:
            return self.niw
        p = n_knots + 1
        return NIWParams(np.zeros(p), 1e-3, n_knots + 2.0, np.eye(p))


@dataclass(frozen=True)
class ChainConfig:
    """Sweep count, retention schedule, seeding and knot handling."""

    iterations: int = 100_000
    burnin: int = 50_000
    thin: int = 20
    seed: int = 0
    knot_mode: str = "random"
    fixed_knots: tuple | None = None
    init: str = "singleton"
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.knot_mode not in ("fixed", "random"):
            raise ValueError("knot_mode must be 'fixed' or 'random'")
        if self.init not in ("singleton", "single"):
            raise ValueError("init must be 'singleton' or 'single'")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burnin > self.iterations:
            raise ValueError("burnin cannot exceed iterations")
        if self.burnin == self.iterations:
            warnings.warn("burnin equals iterations: no draws will be retained")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burnin) // self.thin

    @classmethod
    def paper(cls, **kw) -> "ChainConfig":
        """The publication schedule: 100k sweeps, 50k burn-in, keep every 20th."""
        return cls(iterations=100_000, burnin=50_000, thin=20, **kw)

    @classmethod
    def ci(cls, **kw) -> "ChainConfig":
        """Desk-scale schedule for continuous integration."""
        return cls(iterations=20_000, burnin=10_000, thin=10, **kw)


@dataclass
class ChainOutput:
    """Thinned post-burn-in snapshots plus run diagnostics.

    Component arrays are stacked over draws: draw d owns rows
    ``comp_offsets[d]:comp_offsets[d+1]`` of ``comp_mu``/``comp_sigma``/
    ``comp_weight``.  Allocation labels are canonical (first-occurrence
    order) and align with the component rows of the same draw.
    """

    s: np.ndarray              # (D, N) int32
    g: np.ndarray              # (D,)
    alpha: np.ndarray          # (D, N)
    beta: np.ndarray           # (D, N, P)
    xi: np.ndarray             # (D, N, K)
    mu_alpha: np.ndarray
    sigma2_alpha: np.ndarray
    sigma2_eps: np.ndarray
    lam: np.ndarray
    comp_mu: np.ndarray        # (sum G_d, P)
    comp_sigma: np.ndarray     # (sum G_d, P, P)
    comp_weight: np.ndarray    # (sum G_d,)
    comp_offsets: np.ndarray   # (D+1,)
    g_trace: np.ndarray        # (iterations,) occupied count per sweep
    knot_accept: np.ndarray    # (N,) per-child acceptance rate (nan if fixed)
    child_ids: tuple
    config: ChainConfig
    horizon: float = 1.0
    runtime_s: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.s.shape[0]

    def g_mode(self) -> int:
        """Posterior mode of the number of occupied components."""
        counts = np.bincount(self.g)
        return int(np.argmax(counts))


def alpha_conditional(resid_sum, n_obs, mu_alpha, sigma2_alpha, sigma2_eps):
    """Mean and variance of the intercept full conditional (vectorised).

    ``resid_sum`` holds per-child sums of (observation - velocity fit).
    With no observations this degenerates to the prior.
    """
    prec = 1.0 / sigma2_alpha + np.asarray(n_obs) / sigma2_eps
    mean = (mu_alpha / sigma2_alpha + np.asarray(resid_sum) / sigma2_eps) / prec
    return mean, 1.0 / prec


def beta_conditional(gram, bty, comp_mu, comp_sigma, sigma2_eps):
    """Mean and covariance of one child's velocity full conditional.

    ``gram`` is B^T B and ``bty`` is B^T (z - alpha) for the child's basis
    matrix B.  An empty child (zero gram) returns the component prior.
    """
    prec_mu = np.linalg.solve(comp_sigma, comp_mu)
    lam_mat = np.linalg.inv(comp_sigma) + np.asarray(gram) / sigma2_eps
    cov = np.linalg.inv(lam_mat)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prec_mu + np.asarray(bty) / sigma2_eps)
    return mean, cov


def update_child_regression(child, reg, comp_mu, comp_sigma, globals_, rng):
    """Draw (alpha, beta) for one child from their Gaussian full conditionals.

    The intercept is drawn given the current velocities, then the velocity
    vector given the new intercept and the child's mixture component.
    """
    from .model import basis_matrix

    b = basis_matrix(child.times, reg.knots, reg.knots.horizon)
    resid_sum = float(np.sum(child.haz - b @ reg.beta))
    mean_a, var_a = alpha_conditional(resid_sum, child.n_obs, globals_.mu_alpha,
                                      globals_.sigma2_alpha, globals_.sigma2_eps)
    alpha = float(mean_a + math.sqrt(var_a) * rng.standard_normal())

    bty = b.T @ (child.haz - alpha)
    mean_b, cov_b = beta_conditional(b.T @ b, bty, comp_mu, comp_sigma,
                                     globals_.sigma2_eps)
    beta = mean_b + np.linalg.cholesky(cov_b) @ rng.standard_normal(mean_b.size)
    return alpha, beta


def slice_sample(logpost, x0: float, rng, width: float = 1.0,
                 max_steps: int = 50) -> float:
    """One stepping-out slice-sampling update of a scalar log density."""
    f0 = logpost(x0)
    log_y = f0 + math.log(rng.random())
    left = x0 - width * rng.random()
    right = left + width
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and logpost(left) > log_y:
        left -= width
        j -= 1
    while k > 0 and logpost(right) > log_y:
        right += width
        k -= 1
    while True:
        x1 = left + (right - left) * rng.random()
        if logpost(x1) > log_y:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1


def _log_scale_posterior(x: float, n: float, sse: float, hc_scale: float) -> float:
    """Log density of x = log(sd) for a Gaussian scale with half-Cauchy prior."""
    sigma = math.exp(x)
    return (-n * x - 0.5 * sse * math.exp(-2.0 * x)
            - math.log1p((sigma / hc_scale) ** 2) + x)


def update_scale(current_sd: float, n: float, sse: float, hc_scale: float,
                 rng, width: float = 1.0, max_steps: int = 50) -> float:
    """Slice update of a standard deviation on the log scale."""
    x = slice_sample(lambda v: _log_scale_posterior(v, n, sse, hc_scale),
                     math.log(current_sd), rng, width, max_steps)
    return math.exp(x)


def update_globals(alpha, sse_eps, n_obs_total, sigma2_alpha, sigma2_eps,
                   priors: PriorConfig, rng):
    """Resample (mu_alpha, sigma2_alpha, sigma2_eps).

    The intercept mean is conjugate normal; the two scales leave their full
    conditionals invariant via slice updates on the log-sd scale.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    prec = 1.0 / priors.mu_alpha_var + n / sigma2_alpha
    mean = (priors.mu_alpha_mean / priors.mu_alpha_var
            + alpha.sum() / sigma2_alpha) / prec
    mu_alpha = float(mean + rng.standard_normal() / math.sqrt(prec))

    sse_alpha = float(np.sum((alpha - mu_alpha) ** 2))
    sd_a = update_scale(math.sqrt(sigma2_alpha), n, sse_alpha,
                        priors.sigma_alpha_scale, rng)
    sd_e = update_scale(math.sqrt(sigma2_eps), n_obs_total, sse_eps,
                        priors.sigma_eps_scale, rng)
    return mu_alpha, sd_a ** 2, sd_e ** 2


class ChainWorkspace:
    """Mutable flat-array state for one chain; shared by the sampler and the
    joint-distribution correctness harness."""

    def __init__(self, packed: PackedCohort, config: ChainConfig, rng):
        self.pc = packed
        self.config = config
        self.rng = rng
        self.n = packed.n_children
        self.k = packed.n_knots
        self.p = self.k + 1
        self.horizon = packed.horizon
        self.niw = config.priors.resolve_niw(self.k)
        if self.niw.dim != self.p:
            raise ValueError("base-distribution dimension must be K+1")

        self.z = packed.haz.astype(float).copy()
        self.cidx = packed.child_index
        self.counts = packed.counts.astype(float)

        if config.knot_mode == "fixed":
            kv = (KnotVector(np.asarray(config.fixed_knots, dtype=float), self.horizon)
                  if config.fixed_knots is not None
                  else equally_spaced_knots(self.k, self.horizon))
            self.xi = np.tile(kv.xi, (self.n, 1))
        else:
            self.xi = np.tile(midpoint_knots(self.k, self.horizon).xi, (self.n, 1))

        self._rebuild_basis()
        self._init_regression()
        self._init_mixture()
        self.knot_proposals = 0
        self.knot_accepts = np.zeros(self.n, dtype=np.int64)

    # ----- caches -------------------------------------------------------

    def _rebuild_basis(self):
        self.basis = basis_for_knots(self.pc.times, self.xi[self.cidx], self.horizon)
        self._refresh_design()
        self._refresh_data_products()

    def _refresh_design(self):
        b = self.basis
        off = self.pc.offsets[:-1]
        self.gram = np.add.reduceat(b[:, :, None] * b[:, None, :], off, axis=0)
        self.b_colsum = np.add.reduceat(b, off, axis=0)
        self._design_dirty = False

    def _refresh_data_products(self):
        off = self.pc.offsets[:-1]
        self.bz = np.add.reduceat(self.basis * self.z[:, None], off, axis=0)
        self.zsum = np.add.reduceat(self.z, off)

    def set_data(self, z: np.ndarray):
        """Replace observations in place (used by the correctness harness)."""
        self.z = np.asarray(z, dtype=float).copy()
        self._refresh_data_products()

    def fitted(self) -> np.ndarray:
        """Current trajectory value at every observation."""
        return self.alpha[self.cidx] + np.einsum(
            "mp,mp->m", self.basis, self.beta[self.cidx])

    # ----- initialisation ------------------------------------------------

    def _init_regression(self):
        # per-child ridge regression; the ridge is scaled to the design so
        # children with weakly identified directions (e.g. no observations in
        # an early segment) start at a tame value instead of a noise-amplified
        # one, which a singleton component could otherwise chase indefinitely
        b = self.basis
        ext = np.concatenate((np.ones((b.shape[0], 1)), b), axis=1)
        off = self.pc.offsets[:-1]
        gram = np.add.reduceat(ext[:, :, None] * ext[:, None, :], off, axis=0)
        scale = np.trace(gram, axis1=1, axis2=2) / (self.p + 1)
        gram += (0.05 * scale)[:, None, None] * np.eye(self.p + 1)
        aty = np.add.reduceat(ext * self.z[:, None], off, axis=0)
        coef = np.linalg.solve(gram, aty[:, :, None])[:, :, 0]
        self.alpha = coef[:, 0].copy()
        self.beta = coef[:, 1:].copy()

        resid = self.z - self.fitted()
        self.sigma2_eps = max(float(np.mean(resid ** 2)), 1e-3)
        self.sigma2_alpha = max(float(np.var(self.alpha)), 1e-3)
        self.mu_alpha = float(np.mean(self.alpha))

    def _init_mixture(self):
        """Start over-dispersed (one component per child) by default.

        Fresh components are instantiated from the diffuse base
        distribution, so under the conditional sampler a cluster is far
        easier to empty than to create; starting from singletons lets the
        chain coalesce toward the posterior instead of relying on rare
        birth moves.  ``init='single'`` keeps the one-component start for
        sensitivity runs.
        """
        lam0 = self.config.priors.lambda_shape / self.config.priors.lambda_rate
        if self.config.init == "single":
            mus = self.beta.mean(axis=0)[None, :].copy()
            if self.n > 1:
                sigma0 = np.cov(self.beta.T) + 1e-6 * np.eye(self.p)
            else:
                sigma0 = self.niw.psi.copy()
            sigmas = sigma0[None, :, :]
            alloc = np.zeros(self.n, dtype=np.int64)
        else:
            mus = self.beta.copy()
            sigmas = np.tile(self.niw.psi, (self.n, 1, 1))
            alloc = np.arange(self.n, dtype=np.int64)
        n_comp = mus.shape[0]
        chols = np.linalg.cholesky(sigmas)
        weights = np.full(n_comp, (1.0 - lam0 / (self.n + lam0)) / n_comp)
        self.mix = MixtureState(
            weights=weights,
            mus=mus,
            sigmas=np.ascontiguousarray(sigmas),
            chols=chols,
            remainder=lam0 / (self.n + lam0),
            lam=lam0,
            alloc=alloc,
            slices=0.5 * weights[alloc],
        )

    # ----- sweep steps ----------------------------------------------------

    def sweep(self):
        rng = self.rng
        mix = self.mix

        # slice variables, then enough sticks that every slice is covered
        mix.slices = mix.weights[mix.alloc] * (1.0 - rng.random(self.n))
        dpmix.stick_breaking_extend(mix, float(mix.slices.min()), rng, self.niw)

        loglik = dpmix.component_logliks(self.beta, mix.mus, mix.chols)
        mix.alloc = dpmix.sample_allocations(loglik, mix.weights, mix.slices, rng)
        mix.check(include_slices=True)  # slice bound is live exactly here
        dpmix.remove_empty_components(mix)

        # concentration first, then weights with the fresh value: together a
        # valid blocked draw of (lam, weights) given the allocations
        mix.lam = dpmix.resample_concentration(
            mix.lam, mix.n_components, self.n,
            self.config.priors.lambda_shape, self.config.priors.lambda_rate, rng)
        counts = mix.counts()
        mix.weights, mix.remainder = dpmix.resample_weights(counts, mix.lam, rng)

        for g in range(mix.n_components):
            post = dpmix.niw_posterior_params(self.niw, self.beta[mix.alloc == g])
            mu, sigma = dpmix.niw_draw(post, rng)
            mix.mus[g] = mu
            mix.sigmas[g] = sigma
            mix.chols[g] = np.linalg.cholesky(sigma)

        self._update_children()
        if self.config.knot_mode == "random":
            self._update_knots()
        self._update_globals()

    def _update_children(self):
        rng = self.rng
        if self._design_dirty:
            self._refresh_design()

        fit_sum = np.einsum("np,np->n", self.b_colsum, self.beta)
        mean_a, var_a = alpha_conditional(self.zsum - fit_sum, self.counts,
                                          self.mu_alpha, self.sigma2_alpha,
                                          self.sigma2_eps)
        self.alpha = mean_a + np.sqrt(var_a) * rng.standard_normal(self.n)

        mix = self.mix
        eye = np.eye(self.p)
        prec = np.empty_like(mix.sigmas)
        prec_mu = np.empty_like(mix.mus)
        for g in range(mix.n_components):
            inv_l = solve_triangular(mix.chols[g], eye, lower=True)
            prec[g] = inv_l.T @ inv_l
            prec_mu[g] = prec[g] @ mix.mus[g]

        lam_mat = prec[mix.alloc] + self.gram / self.sigma2_eps
        rhs = prec_mu[mix.alloc] + (self.bz - self.alpha[:, None] * self.b_colsum) / self.sigma2_eps
        chol = self._batched_cholesky(lam_mat)
        mean = np.linalg.solve(lam_mat, rhs[:, :, None])[:, :, 0]
        eta = rng.standard_normal((self.n, self.p))
        noise = np.linalg.solve(np.swapaxes(chol, 1, 2), eta[:, :, None])[:, :, 0]
        self.beta = mean + noise

    @staticmethod
    def _batched_cholesky(mats: np.ndarray) -> np.ndarray:
        try:
            return np.linalg.cholesky(mats)
        except np.linalg.LinAlgError:
            logger.warning("conditional precision not SPD; jittering once")
            p = mats.shape[-1]
            tr = np.trace(mats, axis1=1, axis2=2)[:, None, None]
            return np.linalg.cholesky(mats + 1e-10 * tr * np.eye(p))

    def _update_knots(self):
        rng = self.rng
        t_all = self.pc.times
        beta_obs = self.beta[self.cidx]
        alpha_obs = self.alpha[self.cidx]
        for k in range(self.k):
            lo = k * self.horizon / self.k
            hi = (k + 1) * self.horizon / self.k
            prop = lo + (hi - lo) * rng.random(self.n)

            xi_obs = self.xi[self.cidx].copy()
            xi_obs[:, k] = prop[self.cidx]
            basis_prop = basis_for_knots(t_all, xi_obs, self.horizon)

            d_old = self.z - alpha_obs - np.einsum("mp,mp->m", self.basis, beta_obs)
            d_new = self.z - alpha_obs - np.einsum("mp,mp->m", basis_prop, beta_obs)
            delta_sse = self.pc.segment_sum(d_new ** 2 - d_old ** 2)

            left = self.xi[:, k - 1] if k >= 1 else np.zeros(self.n)
            right = self.xi[:, k + 1] if k + 1 < self.k else np.full(self.n, self.horizon)
            old = self.xi[:, k]
            logr = (-0.5 * delta_sse / self.sigma2_eps
                    + np.log((right - prop) * (prop - left))
                    - np.log((right - old) * (old - left)))
            accept = np.log(rng.random(self.n)) < logr

            self.xi[accept, k] = prop[accept]
            hit = accept[self.cidx]
            self.basis[hit] = basis_prop[hit]
            self.knot_accepts += accept
            if np.any(accept):
                self._design_dirty = True
        self.knot_proposals += self.k
        if self._design_dirty:
            self._refresh_data_products_after_knots()

    def _refresh_data_products_after_knots(self):
        # bz depends on the basis, zsum does not
        off = self.pc.offsets[:-1]
        self.bz = np.add.reduceat(self.basis * self.z[:, None], off, axis=0)

    def _update_globals(self):
        resid = self.z - self.fitted()
        sse_eps = float(resid @ resid)
        self.mu_alpha, self.sigma2_alpha, self.sigma2_eps = update_globals(
            self.alpha, sse_eps, self.z.size, self.sigma2_alpha,
            self.sigma2_eps, self.config.priors, self.rng)

    # ----- integrity ------------------------------------------------------

    def check_invariants(self):
        self.mix.check(include_slices=False)
        k = np.arange(self.k)
        lo = k * self.horizon / self.k
        hi = (k + 1) * self.horizon / self.k
        if not np.all((self.xi > lo) & (self.xi < hi)):
            raise AssertionError("a change point escaped its subinterval")
        if not (self.sigma2_alpha > 0 and self.sigma2_eps > 0):
            raise AssertionError("non-positive variance")

    def canonical_allocation(self) -> tuple[np.ndarray, np.ndarray]:
        """Allocation relabelled by first occurrence plus the label order."""
        g = self.mix.n_components
        first = np.full(g, self.n, dtype=np.int64)
        np.minimum.at(first, self.mix.alloc, np.arange(self.n))
        order = np.argsort(first, kind="stable")
        rank = np.empty(g, dtype=np.int64)
        rank[order] = np.arange(g)
        return rank[self.mix.alloc], order


def run_chain(cohort: Cohort, config: ChainConfig) -> ChainOutput:
    """Run the full sampler on a cohort and return thinned snapshots.

    Identical (cohort, config) pairs produce identical output arrays.
    """
    start = time.perf_counter()
    packed = cohort.packed()
    rng = np.random.default_rng(config.seed)
    ws = ChainWorkspace(packed, config, rng)

    n, p, k = ws.n, ws.p, ws.k
    d = config.n_retained
    out_s = np.zeros((d, n), dtype=np.int32)
    out_alpha = np.zeros((d, n))
    out_beta = np.zeros((d, n, p))
    out_xi = np.zeros((d, n, k))
    out_g = np.zeros(d, dtype=np.int32)
    scalars = {name: np.zeros(d) for name in
               ("mu_alpha", "sigma2_alpha", "sigma2_eps", "lam")}
    comp_mu, comp_sigma, comp_weight = [], [], []
    comp_offsets = np.zeros(d + 1, dtype=np.int64)
    g_trace = np.zeros(config.iterations, dtype=np.int32)

    kept = 0
    for it in range(1, config.iterations + 1):
        ws.sweep()
        try:
            ws.check_invariants()
        except AssertionError as exc:
            raise RuntimeError(f"invariant breach at iteration {it}: {exc}") from exc
        g_trace[it - 1] = ws.mix.n_components

        if it > config.burnin and (it - config.burnin) % config.thin == 0:
            s_canon, order = ws.canonical_allocation()
            out_s[kept] = s_canon
            out_alpha[kept] = ws.alpha
            out_beta[kept] = ws.beta
            out_xi[kept] = ws.xi
            out_g[kept] = ws.mix.n_components
            scalars["mu_alpha"][kept] = ws.mu_alpha
            scalars["sigma2_alpha"][kept] = ws.sigma2_alpha
            scalars["sigma2_eps"][kept] = ws.sigma2_eps
            scalars["lam"][kept] = ws.mix.lam
            comp_mu.append(ws.mix.mus[order])
            comp_sigma.append(ws.mix.sigmas[order])
            comp_weight.append(ws.mix.weights[order])
            comp_offsets[kept + 1] = comp_offsets[kept] + order.size
            kept += 1

    if ws.knot_proposals:
        knot_rate = ws.knot_accepts / ws.knot_proposals
    else:
        knot_rate = np.full(n, np.nan)

    return ChainOutput(
        s=out_s, g=out_g, alpha=out_alpha, beta=out_beta, xi=out_xi,
        mu_alpha=scalars["mu_alpha"], sigma2_alpha=scalars["sigma2_alpha"],
        sigma2_eps=scalars["sigma2_eps"], lam=scalars["lam"],
        comp_mu=(np.concatenate(comp_mu) if comp_mu else np.zeros((0, p))),
        comp_sigma=(np.concatenate(comp_sigma) if comp_sigma else np.zeros((0, p, p))),
        comp_weight=(np.concatenate(comp_weight) if comp_weight else np.zeros(0)),
        comp_offsets=comp_offsets, g_trace=g_trace, knot_accept=knot_rate,
        child_ids=packed.ids, config=config, horizon=packed.horizon,
        runtime_s=time.perf_counter() - start,
    )
