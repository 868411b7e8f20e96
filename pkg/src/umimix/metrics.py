"""Clustering evaluation: adjusted Rand index, stability, vague cells."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError


@dataclass(frozen=True)
class ContingencyTable:
    """Co-occurrence counts between two labelings plus marginals."""

    counts: np.ndarray  # R x S
    row_totals: np.ndarray
    col_totals: np.ndarray
    n: int


def contingency_table(labels_a, labels_b) -> ContingencyTable:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("labelings must be 1-D and of equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n_r = int(ai.max()) + 1
    n_s = int(bi.max()) + 1
    flat = np.bincount(ai * n_s + bi, minlength=n_r * n_s)
    counts = flat.reshape(n_r, n_s).astype(np.int64)
    return ContingencyTable(
        counts=counts,
        row_totals=counts.sum(axis=1),
        col_totals=counts.sum(axis=0),
        n=int(a.size),
    )


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected partition agreement; 1 for identical partitions.

    Pair counts use exact integer arithmetic, so the result is correct at any
    n.  When both partitions are degenerate (single cluster, or all
    singletons) the correction denominator vanishes; the partitions are then
    identical and the index is defined as 1.
    """
    table = contingency_table(labels_a, labels_b)
    if table.n < 2:
        raise ValidationError("ARI needs at least 2 items")
    sum_ij = sum(math.comb(int(v), 2) for v in table.counts.flat if v > 1)
    sum_a = sum(math.comb(int(v), 2) for v in table.row_totals)
    sum_b = sum(math.comb(int(v), 2) for v in table.col_totals)
    total_pairs = math.comb(table.n, 2)
    expected = Fraction(sum_a * sum_b, total_pairs)
    max_index = Fraction(sum_a + sum_b, 2)
    denom = max_index - expected
    if denom == 0:
        return 1.0
    # one exact rational division, one correctly rounded float conversion
    return float((Fraction(sum_ij) - expected) / denom)


def vague_cells(delta, threshold: float = 0.95) -> np.ndarray:
    """Indices of cells whose largest posterior cluster probability is < threshold."""
    values = getattr(delta, "values", delta)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValidationError("posterior matrix must be 2-D (cells x clusters)")
    if not 0.0 < threshold <= 1.0:
        raise ValidationError("threshold must be in (0, 1]")
    return np.nonzero(values.max(axis=1) < threshold)[0]


def ari_summary(runs, truth) -> tuple[float, float]:
    """Mean and sample standard deviation of per-run ARI against a reference labeling."""
    if len(runs) < 2:
        raise ValidationError("stability summary needs at least 2 runs")
    aris = np.array(
        [adjusted_rand_index(getattr(r, "hard_labels", r), truth) for r in runs]
    )
    return float(aris.mean()), float(aris.std(ddof=1))


def best_cluster_mapping(labels_true, labels_pred) -> dict[int, int]:
    """Map predicted cluster ids to true cluster ids, maximizing co-occurrence.

    Uses an optimal assignment on the contingency table; predicted clusters
    beyond the number of true clusters are left unmapped.
    """
    a = np.asarray(labels_true)
    b = np.asarray(labels_pred)
    true_vals, ai = np.unique(a, return_inverse=True)
    pred_vals, bi = np.unique(b, return_inverse=True)
    table = contingency_table(ai, bi)
    rows, cols = linear_sum_assignment(-table.counts)
    return {int(pred_vals[c]): int(true_vals[r]) for r, c in zip(rows, cols)}
