"""Cluster-count selection by information criteria over a sweep of K."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .countmatrix import SparseCountMatrix
from .em import FitConfig, FitResult, fit_multi_restart
from .errors import UmimixError, ValidationError
from .metrics import adjusted_rand_index

logger = logging.getLogger(__name__)


def parameter_count(k: int, n_genes: int) -> int:
    """Free parameters: G concentrations per cluster plus K-1 mixing weights."""
    return k * n_genes + (k - 1)


@dataclass(frozen=True)
class SelectionRow:
    k: int
    loglik: float | None
    n_parameters: int
    aic: float | None
    bic: float | None
    ari: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.loglik is None


@dataclass(frozen=True)
class SelectionTable:
    rows: list[SelectionRow]
    best_k_aic: int | None
    best_k_bic: int | None


def select_k(
    m: SparseCountMatrix,
    k_range,
    strategy,
    cfg: FitConfig | None = None,
    seed: int = 0,
    truth_labels=None,
    keep_fits: bool = False,
) -> SelectionTable | tuple[SelectionTable, dict[int, FitResult]]:
    """Fit each candidate K with multi-restart EM and tabulate AIC/BIC.

    The tabulated log-likelihood includes the multinomial coefficient so the
    criteria are absolute.  A failing K is recorded as a failed row without
    aborting the sweep.
    """
    ks = [int(k) for k in k_range]
    if not ks or any(k < 1 for k in ks):
        raise ValidationError("k_range must be non-empty with every K >= 1")
    cfg = cfg or FitConfig()

    rows = []
    fits: dict[int, FitResult] = {}
    log_c = math.log(m.n_cells)
    for k in ks:
        params = parameter_count(k, m.n_genes)
        try:
            result = fit_multi_restart(m, k, strategy, cfg, seed=seed)
        except UmimixError as exc:
            logger.warning("K=%d failed: %s", k, exc)
            rows.append(SelectionRow(k=k, loglik=None, n_parameters=params,
                                     aic=None, bic=None, error=str(exc)))
            continue
        loglik = result.final_loglik
        ari = None
        if truth_labels is not None:
            ari = adjusted_rand_index(truth_labels, result.hard_labels)
        rows.append(
            SelectionRow(
                k=k,
                loglik=loglik,
                n_parameters=params,
                aic=2.0 * params - 2.0 * loglik,
                bic=params * log_c - 2.0 * loglik,
                ari=ari,
            )
        )
        if keep_fits:
            fits[k] = result

    ok = [r for r in rows if not r.failed]
    best_aic = min(ok, key=lambda r: r.aic).k if ok else None
    best_bic = min(ok, key=lambda r: r.bic).k if ok else None
    table = SelectionTable(rows=rows, best_k_aic=best_aic, best_k_bic=best_bic)
    if keep_fits:
        return table, fits
    return table
