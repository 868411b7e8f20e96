"""Synthetic UMI count matrices drawn from a Dirichlet-multinomial mixture.

Each cell is generated in two stages: its proportion vector is drawn from the
cluster's Dirichlet prior (via normalized Gamma draws), then counts are drawn
from a multinomial at fixed depth.  Every cell uses its own RNG stream derived
from (seed, cell index), so results do not depend on generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .countmatrix import SparseCountMatrix
from .errors import ValidationError
from .polya import AlphaVector

SCENARIO_AXES = (
    "snr",
    "n_clusters",
    "n_genes",
    "n_cells",
    "depth",
    "informative_fraction",
)

# Scenario template baseline; individual axes override one knob at a time.
_BASE_K = 3
_BASE_GENES = 100
_BASE_CELLS = 600
_BASE_DEPTH = 1000
_BASE_INFORMATIVE_FRACTION = 0.3
_BASE_SEPARATION = 4.0


@dataclass(frozen=True)
class SimulationSpec:
    """Inputs of one simulated dataset; fully determines the draw given the seed."""

    n_clusters: int
    n_genes: int
    n_cells: int
    cluster_proportions: np.ndarray
    alphas: list[AlphaVector]
    depth: int
    n_informative_genes: int
    seed: int

    def __post_init__(self):
        props = np.asarray(self.cluster_proportions, dtype=np.float64)
        if props.shape != (self.n_clusters,) or np.any(props < 0):
            raise ValidationError("cluster proportions must be a length-K simplex vector")
        if abs(props.sum() - 1.0) > 1e-9:
            raise ValidationError("cluster proportions must sum to 1")
        props = props / props.sum()
        props.flags.writeable = False
        object.__setattr__(self, "cluster_proportions", props)
        if len(self.alphas) != self.n_clusters:
            raise ValidationError("need one alpha vector per cluster")
        for a in self.alphas:
            if len(a) != self.n_genes:
                raise ValidationError("alpha vectors must have length n_genes")
        if self.depth < 1:
            raise ValidationError("depth must be >= 1")
        if self.n_cells < 1 or self.n_genes < 1 or self.n_clusters < 1:
            raise ValidationError("dimensions must be >= 1")
        if not 0 <= self.n_informative_genes <= self.n_genes:
            raise ValidationError("informative gene count out of range")

    def to_json(self) -> str:
        doc = {
            "n_clusters": self.n_clusters,
            "n_genes": self.n_genes,
            "n_cells": self.n_cells,
            "cluster_proportions": list(map(float, self.cluster_proportions)),
            "alphas": [list(map(float, a.values)) for a in self.alphas],
            "depth": self.depth,
            "n_informative_genes": self.n_informative_genes,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimulationSpec":
        doc = json.loads(text)
        return cls(
            n_clusters=doc["n_clusters"],
            n_genes=doc["n_genes"],
            n_cells=doc["n_cells"],
            cluster_proportions=np.asarray(doc["cluster_proportions"]),
            alphas=[AlphaVector(np.asarray(v)) for v in doc["alphas"]],
            depth=doc["depth"],
            n_informative_genes=doc["n_informative_genes"],
            seed=doc["seed"],
        )


def _draw_cell(spec: SimulationSpec, j: int) -> tuple[int, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, j]))
    z = int(np.searchsorted(np.cumsum(spec.cluster_proportions), rng.random(), side="right"))
    z = min(z, spec.n_clusters - 1)
    gamma = rng.standard_gamma(spec.alphas[z].values)
    total = gamma.sum()
    if total <= 0.0:
        # all Gamma draws underflowed; the Dirichlet limit puts the mass on one vertex
        p = np.zeros(spec.n_genes)
        p[rng.choice(spec.n_genes, p=spec.alphas[z].values / spec.alphas[z].precision)] = 1.0
    else:
        p = gamma / total
    x = rng.multinomial(spec.depth, p)
    return z, p, x


def simulate(spec: SimulationSpec) -> tuple[SparseCountMatrix, np.ndarray, np.ndarray]:
    """Draw a count matrix; returns (matrix, true labels, true proportion vectors)."""
    labels = np.empty(spec.n_cells, dtype=np.int64)
    p_true = np.empty((spec.n_cells, spec.n_genes), dtype=np.float64)
    gene_chunks = []
    cell_chunks = []
    count_chunks = []
    for j in range(spec.n_cells):
        z, p, x = _draw_cell(spec, j)
        labels[j] = z
        p_true[j] = p
        nz = np.nonzero(x)[0]
        gene_chunks.append(nz)
        cell_chunks.append(np.full(nz.size, j, dtype=np.int64))
        count_chunks.append(x[nz])

    width = len(str(spec.n_genes))
    gene_ids = [f"g{i:0{width}d}" for i in range(spec.n_genes)]
    width = len(str(spec.n_cells))
    cell_ids = [f"c{j:0{width}d}" for j in range(spec.n_cells)]
    matrix = SparseCountMatrix(
        gene_ids,
        cell_ids,
        np.concatenate(gene_chunks),
        np.concatenate(cell_chunks),
        np.concatenate(count_chunks),
    )
    return matrix, labels, p_true


def compute_snr(alpha_1: AlphaVector, alpha_2: AlphaVector) -> float:
    """Separation of two concentration vectors.

    L1 distance divided by the square root of the summed entrywise sample
    variances of the two vectors.  Identical vectors give 0; distinct constant
    vectors have no variance scale and report infinity.
    """
    a = alpha_1.values
    b = alpha_2.values
    if a.shape != b.shape:
        raise ValidationError("alpha vectors must have equal length")
    l1 = float(np.abs(a - b).sum())
    if l1 == 0.0:
        return 0.0
    spread = float(np.var(a, ddof=1) + np.var(b, ddof=1)) if a.size > 1 else 0.0
    if spread == 0.0:
        return math.inf
    return l1 / math.sqrt(spread)


def min_pairwise_snr(alphas: list[AlphaVector]) -> float:
    """For more than two clusters, the scenario separation is the worst pair."""
    if len(alphas) < 2:
        return 0.0
    return min(
        compute_snr(alphas[i], alphas[j])
        for i in range(len(alphas))
        for j in range(i + 1, len(alphas))
    )


_MARKER_BASE = 18.0
_BOOST_SHARE_PER_LEVEL = 0.3


def _scenario_alphas(
    n_clusters: int, n_genes: int, informative_fraction: float, separation: float
) -> tuple[list[AlphaVector], int]:
    """Cluster concentration vectors with a skewed expression profile.

    Three gene bands mimic real UMI data: cluster-specific marker genes
    (interleaved across clusters, boosted by ``separation`` in their own
    cluster), a small set of strongly expressed shared genes, and a weakly
    expressed background making up the rest.  Non-informative genes are
    identical in every cluster, and the non-constant profile gives the
    concentration vectors a variance scale, so the reported separation grows
    with the boost.
    """
    if not 0.0 <= informative_fraction <= 1.0:
        raise ValidationError("informative fraction must be in [0, 1]")
    if separation < 0:
        raise ValidationError("separation must be >= 0")
    n_informative = int(round(informative_fraction * n_genes))
    n_shared = min(max(2, int(round(0.04 * n_genes))), n_genes - n_informative)
    n_background = n_genes - n_informative - n_shared
    base = np.empty(n_genes)
    base[:n_informative] = _MARKER_BASE
    base[n_informative:n_informative + n_shared] = np.linspace(26.0, 22.0, n_shared)
    base[n_informative + n_shared:] = np.linspace(0.35, 0.25, n_background)
    boost = _BOOST_SHARE_PER_LEVEL * separation * _MARKER_BASE
    alphas = []
    for k in range(n_clusters):
        values = base.copy()
        if n_informative > 0:
            block = np.arange(n_informative)[np.arange(n_informative) % n_clusters == k]
            values[block] += boost
        alphas.append(AlphaVector(values))
    return alphas, n_informative


def build_spec(
    n_clusters: int,
    n_genes: int,
    n_cells: int,
    depth: int,
    informative_fraction: float = _BASE_INFORMATIVE_FRACTION,
    separation: float = _BASE_SEPARATION,
    cluster_proportions=None,
    seed: int = 0,
) -> SimulationSpec:
    """Spec with explicit dimensions and the standard ramp-plus-boost alphas."""
    alphas, n_informative = _scenario_alphas(
        n_clusters, n_genes, informative_fraction, separation
    )
    if cluster_proportions is None:
        cluster_proportions = np.full(n_clusters, 1.0 / n_clusters)
    return SimulationSpec(
        n_clusters=n_clusters,
        n_genes=n_genes,
        n_cells=n_cells,
        cluster_proportions=np.asarray(cluster_proportions, dtype=np.float64),
        alphas=alphas,
        depth=depth,
        n_informative_genes=n_informative,
        seed=seed,
    )


def make_scenario(axis: str, level, seed: int = 0) -> SimulationSpec:
    """Build a reproducible simulation spec varying one design axis.

    Axes: ``snr`` (level = separation multiplier), ``n_clusters``,
    ``n_genes``, ``n_cells``, ``depth`` (level = the corresponding count) and
    ``informative_fraction`` (level in [0, 1]).
    """
    if axis not in SCENARIO_AXES:
        raise ValidationError(f"unknown scenario axis {axis!r}; expected one of {SCENARIO_AXES}")
    k = _BASE_K
    n_genes = _BASE_GENES
    n_cells = _BASE_CELLS
    depth = _BASE_DEPTH
    fraction = _BASE_INFORMATIVE_FRACTION
    separation = _BASE_SEPARATION
    if axis == "snr":
        separation = float(level)
    elif axis == "n_clusters":
        k = int(level)
    elif axis == "n_genes":
        n_genes = int(level)
    elif axis == "n_cells":
        n_cells = int(level)
    elif axis == "depth":
        depth = int(level)
    else:
        fraction = float(level)

    alphas, n_informative = _scenario_alphas(k, n_genes, fraction, separation)
    return SimulationSpec(
        n_clusters=k,
        n_genes=n_genes,
        n_cells=n_cells,
        cluster_proportions=np.full(k, 1.0 / k),
        alphas=alphas,
        depth=depth,
        n_informative_genes=n_informative,
        seed=seed,
    )
