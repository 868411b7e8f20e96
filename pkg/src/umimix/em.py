"""EM fitting of the Dirichlet-multinomial mixture.

The E-step computes posterior membership probabilities (responsibilities)
from per-cluster Polya log-likelihoods and mixing proportions.  The M-step
updates the mixing proportions as responsibility column means and the
concentration vectors with one sweep of Minka's fixed-point iteration for the
leave-one-out likelihood:

    alpha_ik <- alpha_ik * [sum_j d_jk x_ij / (x_ij - 1 + alpha_ik)]
                        / [sum_j d_jk T_j  / (T_j  - 1 + |alpha_k|)]

Entries with x_ij = 0 contribute exactly 0 to the numerator (the limit value),
which is what makes O(nnz) sparse sweeps possible.  The fixed-point sweep is a
surrogate rather than an exact maximizer, so the log-likelihood may dip
slightly between iterations; dips beyond the convergence tolerance are logged
as warnings, never fatal.

Convergence requires BOTH a small relative log-likelihood change,
|dL| / (|L| + 1), and a small squared change of the mixing proportions.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .countmatrix import SparseCountMatrix
from .errors import FitError, ValidationError
from .polya import ALPHA_FLOOR, AlphaVector

logger = logging.getLogger(__name__)

# Counts up to this value use gather tables of prefix-summed logs instead of
# per-entry log-Gamma calls; larger counts fall back to gammaln.
_TABLE_MAX_COUNT = 64


@dataclass(frozen=True)
class DirichletMixtureModel:
    """K cluster-specific concentration vectors plus mixing proportions."""

    alphas: list[AlphaVector]
    pi: np.ndarray

    def __post_init__(self):
        if not self.alphas:
            raise ValidationError("model needs at least one cluster")
        n_genes = len(self.alphas[0])
        if any(len(a) != n_genes for a in self.alphas):
            raise ValidationError("all alpha vectors must have the same length")
        pi = np.asarray(self.pi, dtype=np.float64)
        if pi.shape != (len(self.alphas),):
            raise ValidationError("pi must have one entry per cluster")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValidationError("pi must be non-negative and sum to 1")
        pi = pi.copy()
        pi.flags.writeable = False
        object.__setattr__(self, "pi", pi)

    @property
    def n_clusters(self) -> int:
        return len(self.alphas)

    @property
    def n_genes(self) -> int:
        return len(self.alphas[0])

    def alpha_matrix(self) -> np.ndarray:
        """Stacked (K, G) concentration matrix."""
        return np.stack([a.values for a in self.alphas])

    def permuted(self, order) -> "DirichletMixtureModel":
        order = list(order)
        return DirichletMixtureModel(
            alphas=[self.alphas[k] for k in order], pi=self.pi[order]
        )


@dataclass(frozen=True)
class ResponsibilityMatrix:
    """Cells x clusters posterior membership probabilities; rows sum to 1."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("responsibilities must be 2-D (cells x clusters)")
        if np.any(values < 0) or np.any(values > 1):
            raise ValidationError("responsibilities must lie in [0, 1]")
        if np.any(np.abs(values.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("responsibility rows must sum to 1")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.values.shape[1]

    def hard_labels(self) -> np.ndarray:
        """Argmax cluster per cell; ties break toward the lower index."""
        return np.argmax(self.values, axis=1).astype(np.int64)


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    loglik_rel_tol: float = 1e-6
    pi_sq_tol: float = 1e-8
    alpha_floor: float = ALPHA_FLOOR
    n_restarts: int = 10
    reseed_empty: bool = False
    n_threads: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.loglik_rel_tol <= 0 or self.pi_sq_tol <= 0 or self.alpha_floor <= 0:
            raise ValidationError("tolerances and the alpha floor must be > 0")
        if self.n_restarts < 1 or self.n_threads < 1:
            raise ValidationError("n_restarts and n_threads must be >= 1")


@dataclass(frozen=True)
class FitResult:
    model: DirichletMixtureModel
    responsibilities: ResponsibilityMatrix
    hard_labels: np.ndarray
    loglik_trace: np.ndarray
    converged: bool
    convergence_reason: str
    iterations: int
    seed: int | None = None
    restart_index: int | None = None

    @property
    def final_loglik(self) -> float:
        return float(self.loglik_trace[-1])


def _check_matrix_for_fit(m: SparseCountMatrix, n_genes: int) -> None:
    if m.n_genes != n_genes:
        raise ValidationError(
            f"model has {n_genes} genes but the matrix has {m.n_genes}"
        )
    zero = np.nonzero(m.cell_totals == 0)[0]
    if zero.size:
        raise ValidationError(
            f"cell {m.cell_ids[zero[0]]!r} (index {zero[0]}) has zero total count; "
            "the likelihood requires T_j >= 1"
        )


def _log_prefix_table(alpha: np.ndarray, vmax: int) -> np.ndarray:
    """Table P with P[v, i] = sum_{m<v} log(alpha_i + m) = lgamma(x+a) - lgamma(a) at x=v."""
    offsets = np.arange(vmax, dtype=np.float64)[:, None]
    logs = np.log(alpha[None, :] + offsets)
    table = np.empty((vmax + 1, alpha.size), dtype=np.float64)
    table[0] = 0.0
    np.cumsum(logs, axis=0, out=table[1:])
    return table


def _entry_loglik_terms(m: SparseCountMatrix, alpha: np.ndarray) -> np.ndarray:
    """Per stored entry: lgamma(x + alpha_gene) - lgamma(alpha_gene)."""
    counts = m.counts
    genes = m.gene_indices
    vmax = min(int(counts.max(initial=0)), _TABLE_MAX_COUNT)
    terms = np.empty(counts.size, dtype=np.float64)
    if vmax >= 1:
        table = _log_prefix_table(alpha, vmax)
        small = counts <= vmax
        terms[small] = table[counts[small], genes[small]]
        big = ~small
    else:
        big = np.ones(counts.size, dtype=bool)
    if big.any():
        a = alpha[genes[big]]
        terms[big] = gammaln(counts[big] + a) - gammaln(a)
    return terms


def cluster_log_likelihoods(m: SparseCountMatrix, model: DirichletMixtureModel) -> np.ndarray:
    """(C, K) matrix of per-cell Polya log-likelihoods, one column per cluster.

    The multinomial coefficient is omitted; it is constant in alpha.
    """
    _check_matrix_for_fit(m, model.n_genes)
    alpha_mat = model.alpha_matrix()
    totals = m.cell_totals.astype(np.float64)
    out = np.empty((m.n_cells, model.n_clusters), dtype=np.float64)
    for k in range(model.n_clusters):
        terms = _entry_loglik_terms(m, alpha_mat[k])
        per_cell = np.bincount(m.cell_indices, weights=terms, minlength=m.n_cells)
        precision = model.alphas[k].precision
        out[:, k] = per_cell + gammaln(precision) - gammaln(totals + precision)
    return out


def e_step(
    m: SparseCountMatrix, model: DirichletMixtureModel
) -> tuple[ResponsibilityMatrix, float]:
    """Responsibilities and the total log-likelihood (coefficient included).

    d_jk is the softmax over clusters of log pi_k plus the cluster-k Polya
    log-likelihood, computed with max-subtracted log-sum-exp.
    """
    logp = cluster_log_likelihoods(m, model)
    with np.errstate(divide="ignore"):
        logp += np.log(model.pi)[None, :]
    row_max = logp.max(axis=1)
    bad = ~np.isfinite(row_max)
    if bad.any():
        j = int(np.nonzero(bad)[0][0])
        raise FitError(
            f"cell {m.cell_ids[j]!r} (index {j}) has zero posterior mass under every cluster"
        )
    shifted = np.exp(logp - row_max[:, None])
    norm = shifted.sum(axis=1)
    delta = shifted / norm[:, None]
    total = float(
        np.sum(row_max + np.log(norm)) + m.log_multinomial_coefficients.sum()
    )
    if not np.isfinite(total):
        j = int(np.nonzero(~np.isfinite(row_max + np.log(norm)))[0][0])
        raise FitError(f"non-finite log-likelihood at cell {m.cell_ids[j]!r} (index {j})")
    return ResponsibilityMatrix(delta), total


def m_step_pi(delta: ResponsibilityMatrix) -> np.ndarray:
    """Mixing proportions as responsibility column means."""
    pi = delta.values.mean(axis=0)
    return pi / pi.sum()


def _ratio_table(alpha: np.ndarray, vmax: int) -> np.ndarray:
    """Table R with R[v, i] = v / (v - 1 + alpha_i) for v = 1..vmax (row 0 unused)."""
    v = np.arange(1, vmax + 1, dtype=np.float64)[:, None]
    table = np.empty((vmax + 1, alpha.size), dtype=np.float64)
    table[0] = 0.0
    table[1:] = v / (v - 1.0 + alpha[None, :])
    return table


def _entry_ratio_terms(m: SparseCountMatrix, alpha: np.ndarray) -> np.ndarray:
    counts = m.counts
    genes = m.gene_indices
    vmax = min(int(counts.max(initial=0)), _TABLE_MAX_COUNT)
    terms = np.empty(counts.size, dtype=np.float64)
    if vmax >= 1:
        table = _ratio_table(alpha, vmax)
        small = counts <= vmax
        terms[small] = table[counts[small], genes[small]]
        big = ~small
    else:
        big = np.ones(counts.size, dtype=bool)
    if big.any():
        c = counts[big].astype(np.float64)
        terms[big] = c / (c - 1.0 + alpha[genes[big]])
    return terms


def m_step_alpha(
    m: SparseCountMatrix,
    delta: ResponsibilityMatrix,
    current: DirichletMixtureModel,
    floor: float = ALPHA_FLOOR,
) -> list[AlphaVector]:
    """One Minka fixed-point sweep per cluster; results are clamped at ``floor``.

    The denominator uses the pre-update concentration total.  An empty cluster
    (zero responsibility mass) collapses to the floor vector.
    """
    _check_matrix_for_fit(m, current.n_genes)
    alpha_mat = current.alpha_matrix()
    d = delta.values
    totals = m.cell_totals.astype(np.float64)
    new_alphas = []
    for k in range(current.n_clusters):
        denominator = float(
            np.sum(d[:, k] * (totals / (totals - 1.0 + current.alphas[k].precision)))
        )
        if denominator <= 0.0:
            new_alphas.append(AlphaVector(np.full(current.n_genes, floor)))
            continue
        ratios = _entry_ratio_terms(m, alpha_mat[k])
        numerator = np.bincount(
            m.gene_indices, weights=d[m.cell_indices, k] * ratios, minlength=m.n_genes
        )
        updated = alpha_mat[k] * numerator / denominator
        new_alphas.append(AlphaVector(np.maximum(updated, floor)))
    return new_alphas


def _reseed_empty_clusters(
    m: SparseCountMatrix,
    alphas: list[AlphaVector],
    delta: ResponsibilityMatrix,
    rng: np.random.Generator,
) -> list[AlphaVector]:
    """Replace the concentration of responsibility-starved clusters.

    The new vector points at a random cell's smoothed proportions and keeps
    the mean precision of the surviving clusters.
    """
    mass = delta.values.sum(axis=0)
    empty = np.nonzero(mass < 1e-12)[0]
    if empty.size == 0:
        return alphas
    alive = [a.precision for k, a in enumerate(alphas) if k not in set(empty.tolist())]
    precision = float(np.mean(alive)) if alive else float(m.n_genes)
    dense_col = np.zeros(m.n_genes)
    out = list(alphas)
    for k in empty:
        j = int(rng.integers(0, m.n_cells))
        dense_col[:] = 0.0
        sel = m.cell_indices == j
        dense_col[m.gene_indices[sel]] = m.counts[sel]
        smoothed = (dense_col + 0.5) / (m.cell_totals[j] + 0.5 * m.n_genes)
        out[k] = AlphaVector.floored(smoothed * precision)
        logger.warning("reseeded empty cluster %d from cell index %d", k, j)
    return out


def fit(
    m: SparseCountMatrix,
    init: DirichletMixtureModel,
    cfg: FitConfig | None = None,
    seed: int | None = None,
) -> FitResult:
    """Run EM from ``init`` until both convergence criteria hold or the
    iteration cap is reached.

    ``seed`` is recorded in the result and drives the optional empty-cluster
    reseeding; the fit is otherwise deterministic.
    """
    cfg = cfg or FitConfig()
    _check_matrix_for_fit(m, init.n_genes)
    model = init
    trace = []
    prev_loglik = None
    pi_change = None
    converged = False
    reason = "max_iterations"
    delta = None
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        delta, loglik = e_step(m, model)
        trace.append(loglik)
        if prev_loglik is not None:
            rel = abs(loglik - prev_loglik) / (abs(loglik) + 1.0)
            if loglik < prev_loglik and rel > cfg.loglik_rel_tol:
                logger.warning(
                    "log-likelihood decreased by %.3g (relative %.3g) at iteration %d; "
                    "the fixed-point update is a surrogate, continuing",
                    prev_loglik - loglik,
                    rel,
                    iteration,
                )
            if rel < cfg.loglik_rel_tol and pi_change < cfg.pi_sq_tol:
                converged = True
                reason = "loglik_and_pi_tolerance"
                break
        prev_loglik = loglik
        new_pi = m_step_pi(delta)
        pi_change = float(np.sum((new_pi - model.pi) ** 2))
        new_alphas = m_step_alpha(m, delta, model, floor=cfg.alpha_floor)
        if cfg.reseed_empty:
            rng = np.random.default_rng(np.random.SeedSequence([seed or 0, 2, iteration]))
            new_alphas = _reseed_empty_clusters(m, new_alphas, delta, rng)
        model = DirichletMixtureModel(alphas=new_alphas, pi=new_pi)

    return FitResult(
        model=model,
        responsibilities=delta,
        hard_labels=delta.hard_labels(),
        loglik_trace=np.asarray(trace),
        converged=converged,
        convergence_reason=reason,
        iterations=iteration,
        seed=seed,
    )


def fit_multi_restart(
    m: SparseCountMatrix,
    k: int,
    strategy,
    cfg: FitConfig | None = None,
    seed: int = 0,
) -> FitResult:
    """Run ``cfg.n_restarts`` independent fits and keep the best final
    log-likelihood (ties break toward the lower restart index).

    Restart r uses the seed stream derived from (seed, r) for both
    initialization and fitting, so the outcome is reproducible and independent
    of ``cfg.n_threads``.
    """
    from .initialize import build_initial_model  # deferred: initialize imports this module

    cfg = cfg or FitConfig()
    if k < 1:
        raise ValidationError("k must be >= 1")

    def run_one(r: int) -> FitResult | Exception:
        child = int(np.random.SeedSequence([int(seed), r]).generate_state(1)[0])
        try:
            init = build_initial_model(m, k, strategy, child)
            result = fit(m, init, cfg, seed=child)
        except Exception as exc:  # noqa: BLE001 - propagated if every restart fails
            return exc
        return dataclasses.replace(result, restart_index=r)

    indices = range(cfg.n_restarts)
    if cfg.n_threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
            outcomes = list(pool.map(run_one, indices))
    else:
        outcomes = [run_one(r) for r in indices]

    results = [o for o in outcomes if isinstance(o, FitResult)]
    failures = [o for o in outcomes if not isinstance(o, FitResult)]
    if not results:
        raise FitError(
            f"all {cfg.n_restarts} restarts failed; first error: {failures[0]}"
        )
    for exc in failures:
        logger.warning("restart failed: %s", exc)
    best = results[0]
    for candidate in results[1:]:
        if candidate.final_loglik > best.final_loglik:
            best = candidate
    return best
