"""Consensus clustering from posterior allocation draws.

Component labels mean nothing across MCMC iterations and the number of
occupied components varies, so the point-estimate clustering is chosen by
maximising the posterior expected adjusted Rand index: the mean ARI
between a candidate partition and every sampled allocation vector.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform


@dataclass(frozen=True)
class ClusteringDraw:
    """One posterior allocation vector with contiguous 0-based labels."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.int64)
        labels = np.unique(s)
        if labels.size and not np.array_equal(labels, np.arange(labels.size)):
            raise ValueError("labels must be contiguous starting at 0")
        object.__setattr__(self, "s", s)


@dataclass(frozen=True)
class PSM:
    """Posterior similarity matrix of pairwise co-clustering frequencies."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("similarity matrix must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-12):
            raise ValueError("similarity matrix must have unit diagonal")
        if m.min() < -1e-12 or m.max() > 1.0 + 1e-12:
            raise ValueError("entries must lie in [0, 1]")
        object.__setattr__(self, "matrix", m)


def _as_label_array(s) -> np.ndarray:
    return np.asarray(getattr(s, "s", s), dtype=np.int64)


def _comb2(n) -> np.ndarray | float:
    return n * (n - 1) / 2.0


def ari(s, s_tilde) -> float:
    """Adjusted Rand index between two partitions of the same items.

    Counts are small enough that every term is an exactly represented
    integer, so equal partitions give exactly 1.0.
    """
    a = _as_label_array(s)
    b = _as_label_array(s_tilde)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least two items")
    _, a_inv = np.unique(a, return_inverse=True)
    _, b_inv = np.unique(b, return_inverse=True)
    ga = a_inv.max() + 1
    gb = b_inv.max() + 1
    table = np.bincount(a_inv * gb + b_inv, minlength=ga * gb).reshape(ga, gb)
    sum_cells = _comb2(table.astype(float)).sum()
    sum_rows = _comb2(table.sum(axis=1).astype(float)).sum()
    sum_cols = _comb2(table.sum(axis=0).astype(float)).sum()
    expected = sum_rows * sum_cols / _comb2(float(n))
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        # both partitions trivial, which forces them identical
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def canonicalize(labels) -> np.ndarray:
    """Relabel so clusters are numbered 0,1,... by first occurrence."""
    s = _as_label_array(labels)
    uniq, first, inverse = np.unique(s, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    return rank[inverse]


def psm_from_draws(draws) -> np.ndarray:
    """Fraction of draws placing each pair of items together (N x N)."""
    s = _draws_matrix(draws)
    d, n = s.shape
    if d < 1:
        raise ValueError("need at least one draw")
    acc = np.zeros((n, n), dtype=np.float64)
    step = max(1, int(4e6 / max(n * n, 1)))
    for lo in range(0, d, step):
        block = s[lo:lo + step]
        acc += (block[:, :, None] == block[:, None, :]).sum(axis=0)
    return acc / d


def _draws_matrix(draws) -> np.ndarray:
    if isinstance(draws, np.ndarray) and draws.ndim == 2:
        return draws.astype(np.int64, copy=False)
    rows = [_as_label_array(d) for d in draws]
    return np.asarray(rows, dtype=np.int64)


def _column_comb2(s: np.ndarray) -> np.ndarray:
    """Sum of comb2 over cluster sizes for every draw (row) of s."""
    d, n = s.shape
    gmax = int(s.max()) + 1
    offsets = np.arange(d, dtype=np.int64)[:, None] * gmax
    counts = np.bincount((s + offsets).ravel(), minlength=d * gmax)
    counts = counts.reshape(d, gmax).astype(float)
    return ((counts * counts).sum(axis=1) - n) / 2.0


def pear_against_draws(cand, draws) -> float:
    """Exact mean ARI of one candidate partition against every draw."""
    s = _draws_matrix(draws)
    c = canonicalize(cand)
    return float(_pear_vector(c, s, _column_comb2(s)).mean())


def _pear_vector(cand: np.ndarray, s: np.ndarray, draw_comb2: np.ndarray) -> np.ndarray:
    """ARI of ``cand`` against each row of ``s``; vectorised over draws."""
    d, n = s.shape
    sizes = np.bincount(cand)
    rc = float(_comb2(sizes.astype(float)).sum())
    gmax = int(s.max()) + 1
    offsets = np.arange(d, dtype=np.int64)[:, None] * gmax
    pair_sum = np.zeros(d)
    for p in range(sizes.size):
        sub = s[:, cand == p]
        counts = np.bincount((sub + offsets).ravel(), minlength=d * gmax)
        counts = counts.reshape(d, gmax).astype(float)
        pair_sum += (counts * counts).sum(axis=1)
    cells = (pair_sum - n) / 2.0
    cn = _comb2(float(n))
    expected = rc * draw_comb2 / cn
    maximum = 0.5 * (rc + draw_comb2)
    denom = maximum - expected
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (cells - expected) / denom
    return np.where(denom == 0.0, 1.0, out)


def hierarchical_candidates(psm: np.ndarray) -> list[np.ndarray]:
    """Average-linkage cuts of the dissimilarity 1 - PSM at every height."""
    m = np.asarray(getattr(psm, "matrix", psm), dtype=float)
    n = m.shape[0]
    dist = np.clip(1.0 - m, 0.0, 1.0)
    np.fill_diagonal(dist, 0.0)
    z = linkage(squareform(dist, checks=False), method="average")
    return [canonicalize(fcluster(z, k, criterion="maxclust"))
            for k in range(1, n + 1)]


_WORK: dict = {}


def _init_worker(s, draw_comb2):
    _WORK["s"] = s
    _WORK["draw_comb2"] = draw_comb2


def _eval_candidate(cand: np.ndarray) -> float:
    return float(_pear_vector(cand, _WORK["s"], _WORK["draw_comb2"]).mean())


def maximize_pear(draws, workers: int | None = None, max_draws: int = 2000,
                  subsample_seed: int = 0) -> tuple[np.ndarray, float]:
    """Best consensus partition under posterior expected adjusted Rand.

    Candidates are every distinct sampled clustering plus all average-
    linkage cuts of 1 - PSM; each is scored by its exact mean ARI over the
    draws.  Ties prefer fewer clusters, then lexicographically smaller
    canonical labels.  When more than ``max_draws`` draws are supplied the
    scoring set is subsampled with the recorded seed (candidates still come
    from the full set of distinct draws).

    Returns
    -------
    (labels, pear) : canonical label vector and its PEAR value.
    """
    s_all = _draws_matrix(draws)
    if s_all.shape[0] < 1:
        raise ValueError("need at least one draw")
    s = s_all
    if s_all.shape[0] > max_draws:
        rng = np.random.default_rng(subsample_seed)
        pick = np.sort(rng.choice(s_all.shape[0], size=max_draws, replace=False))
        s = s_all[pick]

    seen: dict[bytes, np.ndarray] = {}
    for row in s_all:
        c = canonicalize(row)
        seen.setdefault(c.tobytes(), c)
    for c in hierarchical_candidates(psm_from_draws(s)):
        seen.setdefault(c.tobytes(), c)
    candidates = list(seen.values())

    draw_comb2 = _column_comb2(s)
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(s, draw_comb2)) as pool:
            scores = list(pool.map(_eval_candidate, candidates, chunksize=16))
    else:
        scores = [float(_pear_vector(c, s, draw_comb2).mean()) for c in candidates]

    best = None
    for cand, score in zip(candidates, scores):
        key = (-score, int(cand.max()) + 1, tuple(cand.tolist()))
        if best is None or key < best[0]:
            best = (key, cand, score)
    return best[1], best[2]
