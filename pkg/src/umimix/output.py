"""Writers and readers for run artifacts: label/posterior/alpha tables and
run metadata.

All tables are plain TSV with fixed float formatting so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .countmatrix import SparseCountMatrix
from .em import FitResult
from .errors import ValidationError
from .selection import SelectionTable

_FLOAT = "{:.12g}"


def _fmt(value: float) -> str:
    return _FLOAT.format(float(value))


def write_fit_outputs(outdir, m: SparseCountMatrix, result: FitResult) -> dict[str, Path]:
    """Write labels.tsv, posterior.tsv, alpha.tsv and pi.tsv for a fit."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    k = result.model.n_clusters
    paths = {}

    paths["labels"] = outdir / "labels.tsv"
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        fh.write("cell_id\tcluster\n")
        for cell, label in zip(m.cell_ids, result.hard_labels):
            fh.write(f"{cell}\t{label}\n")

    paths["posterior"] = outdir / "posterior.tsv"
    with open(paths["posterior"], "w", encoding="utf-8") as fh:
        fh.write("cell_id\t" + "\t".join(f"cluster_{j}" for j in range(k)) + "\n")
        for cell, row in zip(m.cell_ids, result.responsibilities.values):
            fh.write(cell + "\t" + "\t".join(_fmt(v) for v in row) + "\n")

    paths["alpha"] = outdir / "alpha.tsv"
    alpha_mat = result.model.alpha_matrix()
    with open(paths["alpha"], "w", encoding="utf-8") as fh:
        fh.write("gene_id\t" + "\t".join(f"cluster_{j}" for j in range(k)) + "\n")
        for i, gene in enumerate(m.gene_ids):
            fh.write(gene + "\t" + "\t".join(_fmt(alpha_mat[j, i]) for j in range(k)) + "\n")

    paths["pi"] = outdir / "pi.tsv"
    with open(paths["pi"], "w", encoding="utf-8") as fh:
        fh.write("\t".join(f"cluster_{j}" for j in range(k)) + "\n")
        fh.write("\t".join(_fmt(v) for v in result.model.pi) + "\n")

    return paths


def fit_metadata(result: FitResult, cfg) -> dict:
    return {
        "converged": result.converged,
        "convergence_reason": result.convergence_reason,
        "iterations": result.iterations,
        "final_loglik": result.final_loglik,
        "loglik_trace": [float(v) for v in result.loglik_trace],
        "restart_index": result.restart_index,
        "restart_seed": result.seed,
        "config": dataclasses.asdict(cfg),
    }


def write_run_metadata(outdir, document: dict) -> Path:
    """Persist a replayable description of the run (config, seed, results)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "metadata.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_selection_table(outdir, table: SelectionTable) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "selection.tsv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k\tloglik\tn_parameters\taic\tbic\tari\tstatus\n")
        for row in table.rows:
            if row.failed:
                fields = [str(row.k), "NA", str(row.n_parameters), "NA", "NA", "NA",
                          f"failed: {row.error}"]
            else:
                fields = [
                    str(row.k),
                    _fmt(row.loglik),
                    str(row.n_parameters),
                    _fmt(row.aic),
                    _fmt(row.bic),
                    _fmt(row.ari) if row.ari is not None else "NA",
                    "ok",
                ]
            fh.write("\t".join(fields) + "\n")
    return path


def write_labels_tsv(path, cell_ids, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cell_id\tcluster\n")
        for cell, label in zip(cell_ids, labels):
            fh.write(f"{cell}\t{int(label)}\n")


def read_labels_tsv(path) -> tuple[list[str], np.ndarray]:
    cells = []
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise ValidationError(f"{path}: empty label file")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 fields")
            cells.append(fields[0])
            try:
                labels.append(int(fields[1]))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-integer label") from exc
    return cells, np.asarray(labels, dtype=np.int64)


def read_posterior_tsv(path) -> tuple[list[str], np.ndarray]:
    cells = []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        width = len(header) - 1
        if width < 1:
            raise ValidationError(f"{path}: posterior file needs at least one cluster column")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != width + 1:
                raise ValidationError(f"{path}:{lineno}: expected {width + 1} fields")
            cells.append(fields[0])
            try:
                rows.append([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric probability") from exc
    return cells, np.asarray(rows, dtype=np.float64)


def align_labels(
    cells_a: list[str], labels_a: np.ndarray, cells_b: list[str], labels_b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Align two labelings by cell ID; falls back to positional order only
    when both files list the exact same IDs in the same order."""
    if len(cells_a) != len(cells_b):
        raise ValidationError(
            f"label files disagree on length: {len(cells_a)} vs {len(cells_b)}"
        )
    if cells_a == cells_b:
        return labels_a, labels_b
    index_b = {cell: i for i, cell in enumerate(cells_b)}
    if len(index_b) != len(cells_b) or set(cells_a) != set(index_b):
        raise ValidationError("label files do not describe the same cells")
    order = np.array([index_b[c] for c in cells_a])
    return labels_a, labels_b[order]
