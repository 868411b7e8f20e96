"""Figure rendering for CLI reports.

Each function writes one PNG next to the delimited output it illustrates and
returns the path.  Rendering always uses the Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import BetaMarginalTable, MeanVarianceFit
from .selection import SelectionTable

_DPI = 150


def save_loglik_trace(path, trace) -> Path:
    trace = np.asarray(trace)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, trace.size + 1), trace, marker="o", ms=3, lw=1)
    ax.set_xlabel("EM iteration")
    ax.set_ylabel("total log-likelihood")
    ax.set_title("Log-likelihood trace (best restart)")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_selection_plot(path, table: SelectionTable) -> Path:
    rows = [r for r in table.rows if not r.failed]
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        ks = [r.k for r in rows]
        ax.plot(ks, [r.aic for r in rows], "o-", color="tab:red", label="AIC")
        ax.plot(ks, [r.bic for r in rows], "o-", color="tab:blue", label="BIC")
        if table.best_k_bic is not None:
            ax.axvline(table.best_k_bic, color="tab:blue", ls=":", lw=1)
        aris = [r.ari for r in rows]
        if any(a is not None for a in aris):
            twin = ax.twinx()
            twin.plot(ks, [a if a is not None else np.nan for a in aris],
                      "ko", ms=4, label="ARI")
            twin.set_ylabel("ARI vs truth")
            twin.set_ylim(-0.05, 1.05)
    ax.set_xlabel("number of clusters K")
    ax.set_ylabel("criterion value")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_beta_marginal_plot(path, table: BetaMarginalTable) -> Path:
    centers = 0.5 * (table.bin_edges[:-1] + table.bin_edges[1:])
    widths = np.diff(table.bin_edges)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, table.empirical_density, width=widths, color="0.8",
           edgecolor="0.5", label="observed proportions")
    ax.plot(centers, table.theoretical_density, color="tab:blue", lw=2,
            label=f"Beta({table.a:.3g}, {table.b:.3g})")
    ax.set_xlabel(f"proportion of {table.gene_id}")
    ax.set_ylabel("density")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_mean_variance_plot(path, fit: MeanVarianceFit) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(fit.log_means, fit.log_variances, "o", ms=3, alpha=0.6, color="0.4")
    grid = np.linspace(fit.log_means.min(), fit.log_means.max(), 50)
    ax.plot(grid, fit.slope * grid + fit.intercept, color="tab:red", lw=2,
            label=f"fit: slope {fit.slope:.3f}, intercept {fit.intercept:.3f}")
    ax.plot(grid, fit.expected_slope * grid + fit.expected_intercept,
            color="tab:blue", ls="--", lw=1.5,
            label=f"model: slope 1, intercept {fit.expected_intercept:.3f}")
    ax.set_xlabel("log mean proportion")
    ax.set_ylabel("log variance of proportion")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)
