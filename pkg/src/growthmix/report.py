"""Report-path helpers: posterior summaries and matplotlib figures.

Figures are rendered headless to PNG next to the delimited outputs; all
inputs come from files already on disk, so re-rendering is reproducible.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"metadata": {"Software": "growthmix"}}


def posterior_group_curves(arrays: dict, assignment: np.ndarray, horizon: float,
                           n_grid: int = 101):
    """Posterior-mean trajectory of each estimated group on a time grid.

    Averages, over retained draws, every child's trajectory evaluated on the
    grid, then averages children within each assigned group.

    Returns
    -------
    grid : (n_grid,) ages
    curves : (n_groups, n_grid) group-level posterior mean HAZ
    sizes : (n_groups,) children per group
    """
    alpha = arrays["alpha"]
    beta = arrays["beta"]
    xi = arrays["xi"]
    d, n, p = beta.shape
    grid = np.linspace(0.0, horizon, n_grid)

    child_mean = np.zeros((n, n_grid))
    for draw in range(d):
        lo = np.concatenate((np.zeros((n, 1)), xi[draw]), axis=1)[:, None, :]
        hi = np.concatenate((xi[draw], np.full((n, 1), horizon)), axis=1)[:, None, :]
        basis = np.maximum(0.0, np.minimum(grid[None, :, None], hi) - lo)
        child_mean += alpha[draw][:, None] + np.einsum("ngp,np->ng", basis, beta[draw])
    child_mean /= d

    n_groups = int(assignment.max()) + 1
    curves = np.zeros((n_groups, n_grid))
    sizes = np.zeros(n_groups, dtype=np.int64)
    for g in range(n_groups):
        members = assignment == g
        sizes[g] = members.sum()
        curves[g] = child_mean[members].mean(axis=0)
    return grid, curves, sizes


def save_g_posterior_figure(g_values: np.ndarray, path) -> None:
    """Bar chart of the posterior over the number of occupied groups."""
    counts = np.bincount(np.asarray(g_values, dtype=int))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(np.arange(counts.size), counts / max(counts.sum(), 1),
           color="#4878d0", width=0.8)
    ax.set_xlabel("number of occupied groups")
    ax.set_ylabel("posterior probability")
    ax.set_xlim(-0.5, counts.size - 0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=150, **_PNG_META)
    plt.close(fig)


def save_trace_figure(arrays: dict, path) -> None:
    """Trace panels for the global parameters and the concentration."""
    panels = [
        ("mu_alpha", r"$\mu_\alpha$"),
        ("sigma2_alpha", r"$\sigma^2_\alpha$"),
        ("sigma2_eps", r"$\sigma^2_\epsilon$"),
        ("lam", r"$\lambda$"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(8, 5), sharex=True)
    for ax, (key, label) in zip(axes.ravel(), panels):
        ax.plot(arrays[key], lw=0.4, color="#4878d0")
        ax.set_ylabel(label)
    for ax in axes[-1]:
        ax.set_xlabel("retained draw")
    fig.tight_layout()
    fig.savefig(path, dpi=150, **_PNG_META)
    plt.close(fig)


def save_group_trajectory_figure(grid: np.ndarray, curves: np.ndarray,
                                 sizes: np.ndarray, path) -> None:
    """Posterior-mean HAZ trajectory per estimated group."""
    fig, ax = plt.subplots(figsize=(6, 4))
    cmap = plt.get_cmap("tab10")
    for g in range(curves.shape[0]):
        ax.plot(grid, curves[g], color=cmap(g % 10), lw=1.8,
                label=f"group {g + 1} (n={sizes[g]})")
    ax.set_xlabel("age (years)")
    ax.set_ylabel("HAZ")
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150, **_PNG_META)
    plt.close(fig)


def posterior_scalar_summary(arrays: dict) -> list[tuple]:
    """Rows of (name, mean, sd, q05, median, q95) for the tracked scalars."""
    rows = []
    for key in ("mu_alpha", "sigma2_alpha", "sigma2_eps", "lam"):
        vals = arrays[key]
        q05, q50, q95 = np.quantile(vals, [0.05, 0.5, 0.95])
        rows.append((key, float(vals.mean()), float(vals.std(ddof=1)),
                     float(q05), float(q50), float(q95)))
    g = arrays["g"]
    counts = np.bincount(g.astype(int))
    rows.append(("g_mode", float(np.argmax(counts)), 0.0,
                 float(g.min()), float(np.median(g)), float(g.max())))
    return rows
