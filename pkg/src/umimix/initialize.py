"""Initial cluster labels and concentration estimates for the EM fit.

Four strategies are supported, combining a label source (K-means on per-cell
proportion vectors, or uniform random labels) with a moment estimator for the
per-cluster Dirichlet concentration (Ronning's log-ratio average, or the
Weir-Hill intraclass-correlation estimator with a sampling correction).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .countmatrix import SparseCountMatrix
from .em import DirichletMixtureModel
from .errors import EstimationError, ValidationError
from .polya import ALPHA_FLOOR, AlphaVector

logger = logging.getLogger(__name__)

LABEL_SOURCES = ("kmeans", "random")
ALPHA_ESTIMATORS = ("ronning", "weir_hill")

_STRATEGY_CODES = {
    "kr": ("kmeans", "ronning"),
    "kw": ("kmeans", "weir_hill"),
    "rr": ("random", "ronning"),
    "rw": ("random", "weir_hill"),
}

# Ratio/variance floor below which a gene is considered uninformative for the
# moment estimators (sparse data guarantees many zero-variance genes).
_USABLE_EPS = 1e-8

_RANDOM_LABEL_RETRIES = 100


@dataclass(frozen=True)
class InitStrategy:
    label_source: str = "kmeans"
    alpha_estimator: str = "ronning"
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise ValidationError(f"label_source must be one of {LABEL_SOURCES}")
        if self.alpha_estimator not in ALPHA_ESTIMATORS:
            raise ValidationError(f"alpha_estimator must be one of {ALPHA_ESTIMATORS}")
        if self.kmeans_restarts < 1 or self.kmeans_max_iter < 1:
            raise ValidationError("kmeans_restarts and kmeans_max_iter must be >= 1")

    @classmethod
    def from_code(cls, code: str) -> "InitStrategy":
        """Accepts 'kr', 'kw', 'rr' or 'rw'."""
        try:
            source, estimator = _STRATEGY_CODES[code.lower()]
        except KeyError:
            raise ValidationError(
                f"unknown strategy code {code!r}; expected one of {sorted(_STRATEGY_CODES)}"
            ) from None
        return cls(label_source=source, alpha_estimator=estimator)

    @property
    def code(self) -> str:
        return self.label_source[0] + ("r" if self.alpha_estimator == "ronning" else "w")


def _child_seed(seed: int, *salt: int) -> int:
    return int(np.random.SeedSequence([int(seed), *salt]).generate_state(1)[0])


def kmeans_labels(
    m: SparseCountMatrix,
    k: int,
    seed: int,
    n_restarts: int = 10,
    max_iter: int = 100,
) -> np.ndarray:
    """Lloyd K-means with k-means++ seeding on per-cell proportion vectors.

    Runs ``n_restarts`` seedings and keeps the labeling with the smallest
    within-cluster sum of squares.  Every returned cluster is non-empty.
    """
    if k > m.n_cells:
        raise ValidationError(f"k={k} exceeds the number of cells ({m.n_cells})")
    if k == 1:
        return np.zeros(m.n_cells, dtype=np.int64)
    features = m.proportions_csr()
    km = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=n_restarts,
        max_iter=max_iter,
        random_state=_child_seed(seed, 0) % (2**32),
        algorithm="lloyd",
    )
    labels = km.fit_predict(features).astype(np.int64)
    return _force_occupancy(labels, k)


def random_labels(n_cells: int, k: int, seed: int) -> np.ndarray:
    """Uniform random labels, redrawn until every cluster is occupied.

    After a bounded number of redraws (relevant only when k is close to the
    number of cells) occupancy is forced by assigning k distinct cells one
    cluster each.
    """
    if k > n_cells:
        raise ValidationError(f"k={k} exceeds the number of cells ({n_cells})")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    for _ in range(_RANDOM_LABEL_RETRIES):
        labels = rng.integers(0, k, size=n_cells, dtype=np.int64)
        if np.unique(labels).size == k:
            return labels
    anchors = rng.choice(n_cells, size=k, replace=False)
    labels[anchors] = np.arange(k, dtype=np.int64)
    return labels


def _force_occupancy(labels: np.ndarray, k: int) -> np.ndarray:
    present = np.bincount(labels, minlength=k)
    missing = np.nonzero(present == 0)[0]
    if missing.size == 0:
        return labels
    labels = labels.copy()
    for cluster in missing:
        donor = int(np.argmax(np.bincount(labels, minlength=k)))
        labels[np.nonzero(labels == donor)[0][0]] = cluster
    return labels


def proportion_moments(
    m: SparseCountMatrix, member_cells
) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-gene mean and sample variance of observed proportions x_ij / T_j.

    Zero counts contribute zero proportions; cells with zero depth are not
    allowed.  Returns (mean, variance, number of members).
    """
    members = np.asarray(member_cells, dtype=np.int64)
    if members.ndim != 1 or members.size == 0:
        raise ValidationError("member cell set must be a non-empty 1-D index array")
    if np.unique(members).size != members.size:
        raise ValidationError("member cell set contains duplicates")
    if members.min() < 0 or members.max() >= m.n_cells:
        raise ValidationError("member cell index out of range")
    if np.any(m.cell_totals[members] == 0):
        raise ValidationError("member cells must have depth >= 1")

    n = members.size
    in_set = np.zeros(m.n_cells, dtype=bool)
    in_set[members] = True
    keep = in_set[m.cell_indices]
    genes = m.gene_indices[keep]
    props = m.counts[keep] / m.cell_totals[m.cell_indices[keep]]
    s1 = np.bincount(genes, weights=props, minlength=m.n_genes)
    s2 = np.bincount(genes, weights=props * props, minlength=m.n_genes)
    mean = s1 / n
    if n < 2:
        return mean, np.zeros(m.n_genes), n
    var = np.maximum((s2 - s1 * s1 / n) / (n - 1), 0.0)
    return mean, var, n


def ronning_alpha(m: SparseCountMatrix, member_cells) -> AlphaVector:
    """Moment estimate of the Dirichlet concentration from observed proportions.

    log|alpha| is the average over usable genes of
    log[mean (1 - mean) / var - 1]; each alpha_i is then mean_i * |alpha|.
    Usable genes need positive variance, a mean strictly inside (0, 1) and a
    positive log argument.
    """
    mean, var, n = proportion_moments(m, member_cells)
    if n < 2:
        raise EstimationError("concentration estimation needs at least 2 member cells")
    ratio = np.full(m.n_genes, -1.0)
    ok = (var > 0) & (mean > 0) & (mean < 1)
    ratio[ok] = mean[ok] * (1.0 - mean[ok]) / var[ok] - 1.0
    usable = ok & (ratio > _USABLE_EPS)
    if not usable.any():
        raise EstimationError("no usable genes for the Ronning estimator")
    log_total = float(np.mean(np.log(ratio[usable])))
    total = math.exp(log_total)
    return AlphaVector.floored(mean * total, ALPHA_FLOOR)


def weir_hill_alpha(m: SparseCountMatrix, member_cells) -> AlphaVector:
    """Intraclass-correlation moment estimate with a finite-depth correction.

    For each usable gene the overdispersion
    theta_i = [var - mean(1-mean)/Tbar] / [mean(1-mean)(1 - 1/Tbar)]
    is computed with Tbar the average member depth; the averaged theta is
    clamped into (1e-8, 1 - 1e-8) and converted via |alpha| = (1-theta)/theta.
    """
    mean, var, n = proportion_moments(m, member_cells)
    if n < 2:
        raise EstimationError("concentration estimation needs at least 2 member cells")
    members = np.asarray(member_cells, dtype=np.int64)
    t_bar = float(m.cell_totals[members].mean())
    if t_bar <= 1.0:
        raise EstimationError("mean depth must exceed 1 for the sampling correction")
    usable = (var > 0) & (mean > 0) & (mean < 1)
    if not usable.any():
        raise EstimationError("no usable genes for the Weir-Hill estimator")
    mq = mean[usable] * (1.0 - mean[usable])
    theta_i = (var[usable] - mq / t_bar) / (mq * (1.0 - 1.0 / t_bar))
    theta = float(np.clip(np.mean(theta_i), 1e-8, 1.0 - 1e-8))
    total = (1.0 - theta) / theta
    return AlphaVector.floored(mean * total, ALPHA_FLOOR)


_ESTIMATORS = {"ronning": ronning_alpha, "weir_hill": weir_hill_alpha}


def build_initial_model(
    m: SparseCountMatrix, k: int, strategy: InitStrategy, seed: int
) -> DirichletMixtureModel:
    """Initial mixture model: labels from the chosen source, per-cluster alpha
    from the chosen estimator, mixing proportions from cluster sizes.

    Clusters with fewer than 2 members, or whose estimate is degenerate, fall
    back to the whole-matrix estimate (with a warning).
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if strategy.label_source == "kmeans":
        labels = kmeans_labels(
            m, k, seed, n_restarts=strategy.kmeans_restarts, max_iter=strategy.kmeans_max_iter
        )
    else:
        labels = random_labels(m.n_cells, k, seed)

    estimator = _ESTIMATORS[strategy.alpha_estimator]
    global_alpha = None
    alphas = []
    for cluster in range(k):
        members = np.nonzero(labels == cluster)[0]
        alpha = None
        if members.size >= 2:
            try:
                alpha = estimator(m, members)
            except EstimationError as exc:
                logger.warning("cluster %d: %s; falling back to whole-matrix estimate", cluster, exc)
        else:
            logger.warning(
                "cluster %d has %d member(s); falling back to whole-matrix estimate",
                cluster,
                members.size,
            )
        if alpha is None:
            if global_alpha is None:
                global_alpha = estimator(m, np.arange(m.n_cells))
            alpha = global_alpha
        alphas.append(alpha)

    pi = np.bincount(labels, minlength=k) / m.n_cells
    return DirichletMixtureModel(alphas=alphas, pi=pi)
