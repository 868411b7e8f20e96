"""Model-fit diagnostics for one cluster of cells.

Two read-only checks of the Dirichlet assumption on observed proportions
p_ij = x_ij / T_j:

* the empirical distribution of one gene's proportion against its Beta
  marginal Beta(alpha_i, |alpha| - alpha_i);
* the log mean versus log variance of per-gene proportions, which under the
  model follows a line of slope 1 and intercept -log(|alpha| + 1) for
  small-mean genes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist

from .countmatrix import SparseCountMatrix
from .errors import ValidationError
from .initialize import proportion_moments, ronning_alpha
from .polya import AlphaVector, beta_marginal_params


@dataclass(frozen=True)
class BetaMarginalTable:
    """Histogram of observed proportions next to the Beta marginal, per bin."""

    gene_index: int
    gene_id: str
    a: float
    b: float
    bin_edges: np.ndarray
    empirical_mass: np.ndarray
    theoretical_mass: np.ndarray
    empirical_density: np.ndarray
    theoretical_density: np.ndarray

    @property
    def tail_mass(self) -> float:
        """Theoretical mass beyond the last bin edge."""
        return float(1.0 - self.theoretical_mass.sum())

    def total_variation(self) -> float:
        """TV distance between binned empirical and theoretical masses,
        counting the beyond-the-last-edge remainder as one extra bin."""
        e_tail = 1.0 - float(self.empirical_mass.sum())
        diff = float(np.abs(self.empirical_mass - self.theoretical_mass).sum())
        return 0.5 * (diff + abs(e_tail - self.tail_mass))


@dataclass(frozen=True)
class MeanVarianceFit:
    """OLS of log variance on log mean of per-gene proportions, plus the
    model-implied reference line."""

    gene_indices: np.ndarray
    log_means: np.ndarray
    log_variances: np.ndarray
    slope: float
    intercept: float
    expected_slope: float
    expected_intercept: float
    alpha_precision: float


def beta_marginal_table(
    m: SparseCountMatrix,
    member_cells,
    alpha: AlphaVector,
    gene: int,
    n_bins: int = 20,
) -> BetaMarginalTable:
    """Empirical histogram of one gene's proportions next to its Beta marginal.

    Bins span from 0 to the larger of the observed maximum and the Beta
    0.9999 quantile, so the theoretical density integrates to ~1 over the
    table whenever the data do not truncate the support.
    """
    members = np.asarray(member_cells, dtype=np.int64)
    if members.size < 2:
        raise ValidationError("beta marginal needs at least 2 member cells")
    if not 0 <= gene < m.n_genes:
        raise ValidationError(f"gene index {gene} out of range")
    if n_bins < 2:
        raise ValidationError("need at least 2 bins")
    if len(alpha) != m.n_genes:
        raise ValidationError("alpha length does not match the matrix")

    totals = m.cell_totals[members]
    if np.any(totals == 0):
        raise ValidationError("member cells must have depth >= 1")
    row = np.zeros(m.n_cells)
    sel = m.gene_indices == gene
    row[m.cell_indices[sel]] = m.counts[sel]
    props = row[members] / totals

    a, b = beta_marginal_params(alpha, gene)
    upper = max(float(props.max()), float(beta_dist.ppf(0.9999, a, b)))
    upper = min(max(upper, 1e-12), 1.0)
    edges = np.linspace(0.0, upper * (1.0 + 1e-9), n_bins + 1)
    emp_counts, _ = np.histogram(props, bins=edges)
    emp_mass = emp_counts / members.size
    cdf = beta_dist.cdf(edges, a, b)
    theo_mass = np.diff(cdf)
    widths = np.diff(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return BetaMarginalTable(
        gene_index=gene,
        gene_id=m.gene_ids[gene],
        a=a,
        b=b,
        bin_edges=edges,
        empirical_mass=emp_mass,
        theoretical_mass=theo_mass,
        empirical_density=emp_mass / widths,
        theoretical_density=beta_dist.pdf(centers, a, b),
    )


def mean_variance_regression(
    m: SparseCountMatrix,
    member_cells,
    top_fraction: float = 0.01,
) -> MeanVarianceFit:
    """Fit log variance against log mean over the most variable genes.

    Genes are ranked by the standard deviation of their observed proportions;
    the top ``top_fraction`` share is kept and genes without positive mean and
    variance are dropped.  At least 10 usable genes are required.  The
    reference line uses the Ronning concentration estimate of the members.
    """
    if not 0.0 < top_fraction <= 1.0:
        raise ValidationError("top_fraction must be in (0, 1]")
    mean, var, n = proportion_moments(m, member_cells)
    if n < 2:
        raise ValidationError("mean-variance regression needs at least 2 member cells")
    sd = np.sqrt(var)
    n_top = max(1, int(round(top_fraction * m.n_genes)))
    order = np.argsort(-sd, kind="stable")[:n_top]
    usable = order[(mean[order] > 0) & (var[order] > 0)]
    if usable.size < 10:
        raise ValidationError(
            f"only {usable.size} usable genes after the top-fraction cut; need >= 10"
        )
    log_m = np.log(mean[usable])
    log_v = np.log(var[usable])
    slope, intercept = np.polyfit(log_m, log_v, 1)

    alpha = ronning_alpha(m, member_cells)
    return MeanVarianceFit(
        gene_indices=usable,
        log_means=log_m,
        log_variances=log_v,
        slope=float(slope),
        intercept=float(intercept),
        expected_slope=1.0,
        expected_intercept=-float(np.log(alpha.precision + 1.0)),
        alpha_precision=alpha.precision,
    )
