"""Sparse gene-by-cell UMI count matrices: loading, filtering, selection, writing.

Counts are stored as a coordinate list (gene index, cell index, count) with
strictly positive counts; zeros are implicit.  Column (cell) totals are cached
because every likelihood evaluation needs them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse as sp
from scipy.special import gammaln

from .errors import FilterError, MatrixFormatError, ValidationError

MM_HEADER = "%%MatrixMarket matrix coordinate integer general"


class SparseCountMatrix:
    """Genes x cells non-negative integer counts in coordinate form.

    Invariants enforced at construction: stored counts are strictly positive,
    coordinates are unique and in range, and ``cell_totals[j]`` equals the sum
    of column j.
    """

    def __init__(self, gene_ids, cell_ids, gene_indices, cell_indices, counts):
        self.gene_ids = list(gene_ids)
        self.cell_ids = list(cell_ids)
        if len(self.gene_ids) < 1 or len(self.cell_ids) < 1:
            raise ValidationError("matrix must have at least one gene and one cell")

        gene_indices = np.asarray(gene_indices, dtype=np.int64)
        cell_indices = np.asarray(cell_indices, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if not (gene_indices.shape == cell_indices.shape == counts.shape):
            raise ValidationError("coordinate arrays must have equal length")
        if np.any(counts <= 0):
            raise ValidationError("stored counts must be strictly positive")
        if gene_indices.size:
            if gene_indices.min() < 0 or gene_indices.max() >= self.n_genes:
                raise ValidationError("gene index out of range")
            if cell_indices.min() < 0 or cell_indices.max() >= self.n_cells:
                raise ValidationError("cell index out of range")

        # canonical order: by cell, then gene; also exposes duplicates
        order = np.lexsort((gene_indices, cell_indices))
        gene_indices = gene_indices[order]
        cell_indices = cell_indices[order]
        counts = counts[order]
        if gene_indices.size > 1:
            same = (np.diff(cell_indices) == 0) & (np.diff(gene_indices) == 0)
            if np.any(same):
                k = int(np.nonzero(same)[0][0])
                raise ValidationError(
                    f"duplicate coordinate (gene {gene_indices[k]}, cell {cell_indices[k]})"
                )

        for arr in (gene_indices, cell_indices, counts):
            arr.flags.writeable = False
        self.gene_indices = gene_indices
        self.cell_indices = cell_indices
        self.counts = counts
        totals = np.bincount(cell_indices, weights=counts, minlength=self.n_cells)
        totals = totals.astype(np.int64)
        totals.flags.writeable = False
        self.cell_totals = totals

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @property
    def nnz(self) -> int:
        return self.counts.size

    def __repr__(self) -> str:
        return (
            f"SparseCountMatrix({self.n_genes} genes x {self.n_cells} cells, "
            f"{self.nnz} stored counts)"
        )

    @classmethod
    def from_dense(cls, array, gene_ids=None, cell_ids=None) -> "SparseCountMatrix":
        array = np.asarray(array)
        if array.ndim != 2:
            raise ValidationError("dense input must be 2-D (genes x cells)")
        if gene_ids is None:
            gene_ids = [f"gene{i + 1}" for i in range(array.shape[0])]
        if cell_ids is None:
            cell_ids = [f"cell{j + 1}" for j in range(array.shape[1])]
        rows, cols = np.nonzero(array)
        return cls(gene_ids, cell_ids, rows, cols, array[rows, cols])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_genes, self.n_cells), dtype=np.int64)
        dense[self.gene_indices, self.cell_indices] = self.counts
        return dense

    def equals(self, other: "SparseCountMatrix") -> bool:
        return (
            self.gene_ids == other.gene_ids
            and self.cell_ids == other.cell_ids
            and np.array_equal(self.gene_indices, other.gene_indices)
            and np.array_equal(self.cell_indices, other.cell_indices)
            and np.array_equal(self.counts, other.counts)
        )

    def genes_per_cell(self) -> np.ndarray:
        """Number of genes with a positive count, per cell."""
        return np.bincount(self.cell_indices, minlength=self.n_cells)

    def cells_per_gene(self) -> np.ndarray:
        """Number of cells with a positive count, per gene."""
        return np.bincount(self.gene_indices, minlength=self.n_genes)

    def gene_count_sd(self) -> np.ndarray:
        """Sample standard deviation (ddof=1) of raw counts per gene, zeros included."""
        if self.n_cells < 2:
            raise ValidationError("standard deviation needs at least 2 cells")
        c = self.counts.astype(np.float64)
        s1 = np.bincount(self.gene_indices, weights=c, minlength=self.n_genes)
        s2 = np.bincount(self.gene_indices, weights=c * c, minlength=self.n_genes)
        var = (s2 - s1 * s1 / self.n_cells) / (self.n_cells - 1)
        return np.sqrt(np.maximum(var, 0.0))

    def proportions_csr(self) -> sp.csr_matrix:
        """Cells x genes matrix of within-cell proportions x_ij / T_j (sparse).

        Zero-total cells come out as empty rows.
        """
        totals = self.cell_totals[self.cell_indices]
        data = self.counts / totals
        return sp.csr_matrix(
            (data, (self.cell_indices, self.gene_indices)),
            shape=(self.n_cells, self.n_genes),
        )

    @cached_property
    def log_multinomial_coefficients(self) -> np.ndarray:
        """Per-cell log[T_j! / prod_i x_ij!]; constant during fitting."""
        lg = gammaln(self.counts.astype(np.float64) + 1.0)
        per_cell = np.bincount(self.cell_indices, weights=lg, minlength=self.n_cells)
        out = gammaln(self.cell_totals.astype(np.float64) + 1.0) - per_cell
        out.flags.writeable = False
        return out

    def subset_genes(self, keep_mask: np.ndarray) -> "SparseCountMatrix":
        keep_mask = np.asarray(keep_mask, dtype=bool)
        if keep_mask.shape != (self.n_genes,):
            raise ValidationError("gene mask has wrong length")
        new_index = np.cumsum(keep_mask) - 1
        entry_keep = keep_mask[self.gene_indices]
        return SparseCountMatrix(
            [g for g, k in zip(self.gene_ids, keep_mask) if k],
            self.cell_ids,
            new_index[self.gene_indices[entry_keep]],
            self.cell_indices[entry_keep],
            self.counts[entry_keep],
        )

    def subset_cells(self, keep_mask: np.ndarray) -> "SparseCountMatrix":
        keep_mask = np.asarray(keep_mask, dtype=bool)
        if keep_mask.shape != (self.n_cells,):
            raise ValidationError("cell mask has wrong length")
        new_index = np.cumsum(keep_mask) - 1
        entry_keep = keep_mask[self.cell_indices]
        return SparseCountMatrix(
            self.gene_ids,
            [c for c, k in zip(self.cell_ids, keep_mask) if k],
            self.gene_indices[entry_keep],
            new_index[self.cell_indices[entry_keep]],
            self.counts[entry_keep],
        )


@dataclass(frozen=True)
class FilterReport:
    """What a filtering pass removed and the thresholds it applied."""

    cells_removed: int
    genes_removed: int
    genes_selected: int
    criteria: dict


def _read_id_file(path) -> list[str]:
    """One ID per line; extra tab-separated columns allowed, first column wins."""
    ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            ids.append(line.split("\t")[0])
    if not ids:
        raise MatrixFormatError(f"ID file {path} is empty")
    return ids


def load_sparse_matrix(matrix_path, gene_path, barcode_path) -> SparseCountMatrix:
    """Read a MatrixMarket coordinate integer file plus gene/barcode ID files.

    Rows are genes, columns are cells, indices are 1-based.  The ID files must
    match the header dimensions exactly.
    """
    matrix_path = Path(matrix_path)
    with open(matrix_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.lower().split() != MM_HEADER.lower().split():
            raise MatrixFormatError(
                f"unsupported MatrixMarket header: {header!r} (expected {MM_HEADER!r})"
            )
        size_line = None
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            size_line = stripped
            break
        if size_line is None:
            raise MatrixFormatError("missing size line")
        parts = size_line.split()
        if len(parts) != 3:
            raise MatrixFormatError(f"malformed size line: {size_line!r}")
        try:
            n_genes, n_cells, n_entries = (int(p) for p in parts)
        except ValueError as exc:
            raise MatrixFormatError(f"malformed size line: {size_line!r}") from exc
        if n_genes < 1 or n_cells < 1 or n_entries < 0:
            raise MatrixFormatError(f"invalid dimensions in size line: {size_line!r}")
        rows = []
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) != 3:
                raise MatrixFormatError(
                    f"entry line {lineno} must be 'gene cell count', got {stripped!r}"
                )
            try:
                rows.append((int(fields[0]), int(fields[1]), int(fields[2])))
            except ValueError as exc:
                raise MatrixFormatError(
                    f"non-integer entry at line {lineno}: {stripped!r}"
                ) from exc

    body = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    if body.shape[0] != n_entries:
        raise MatrixFormatError(
            f"header promises {n_entries} entries, found {body.shape[0]}"
        )
    gi, ci, vals = body[:, 0], body[:, 1], body[:, 2]
    if np.any(vals < 0):
        raise MatrixFormatError("negative count in matrix file")
    if gi.size and (gi.min() < 1 or gi.max() > n_genes or ci.min() < 1 or ci.max() > n_cells):
        raise MatrixFormatError("coordinate out of range for declared dimensions")

    gene_ids = _read_id_file(gene_path)
    cell_ids = _read_id_file(barcode_path)
    if len(gene_ids) != n_genes:
        raise MatrixFormatError(
            f"matrix declares {n_genes} genes but {gene_path} has {len(gene_ids)} lines"
        )
    if len(cell_ids) != n_cells:
        raise MatrixFormatError(
            f"matrix declares {n_cells} cells but {barcode_path} has {len(cell_ids)} lines"
        )

    keep = vals > 0  # explicit zeros are dropped; they carry no information
    try:
        return SparseCountMatrix(
            gene_ids, cell_ids, gi[keep] - 1, ci[keep] - 1, vals[keep]
        )
    except ValidationError as exc:
        raise MatrixFormatError(str(exc)) from exc


def load_dense_tsv(path) -> SparseCountMatrix:
    """Read a dense tab-separated table: first row cell IDs, first column gene IDs."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    lines = [line for line in lines if line]
    if len(lines) < 2:
        raise MatrixFormatError("dense table needs a header row and at least one gene row")

    header = lines[0].split("\t")
    first_body = lines[1].split("\t")
    if len(header) == len(first_body):
        cell_ids = header[1:]  # corner label present
    elif len(header) == len(first_body) - 1:
        cell_ids = header
    else:
        raise MatrixFormatError(
            f"header has {len(header)} fields but row 1 has {len(first_body)}"
        )
    n_cells = len(cell_ids)
    if n_cells < 1:
        raise MatrixFormatError("no cell columns found")

    gene_ids = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != n_cells + 1:
            raise MatrixFormatError(
                f"ragged row at line {lineno}: expected {n_cells + 1} fields, got {len(fields)}"
            )
        gene_ids.append(fields[0])
        try:
            row = [int(v) for v in fields[1:]]
        except ValueError as exc:
            raise MatrixFormatError(f"non-integer count at line {lineno}") from exc
        if any(v < 0 for v in row):
            raise MatrixFormatError(f"negative count at line {lineno}")
        rows.append(row)

    dense = np.asarray(rows, dtype=np.int64)
    return SparseCountMatrix.from_dense(dense, gene_ids, cell_ids)


def write_matrix_market(m: SparseCountMatrix, matrix_path, gene_path, barcode_path) -> None:
    """Write the matrix in MatrixMarket coordinate integer format plus ID files."""
    with open(matrix_path, "w", encoding="utf-8") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{m.n_genes} {m.n_cells} {m.nnz}\n")
        for g, c, v in zip(m.gene_indices, m.cell_indices, m.counts):
            fh.write(f"{g + 1} {c + 1} {v}\n")
    with open(gene_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(m.gene_ids) + "\n")
    with open(barcode_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(m.cell_ids) + "\n")


def write_dense_tsv(m: SparseCountMatrix, path) -> None:
    dense = m.to_dense()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join([""] + list(m.cell_ids)) + "\n")
        for i, gene in enumerate(m.gene_ids):
            fh.write(gene + "\t" + "\t".join(str(v) for v in dense[i]) + "\n")


def filter_cells_and_genes(
    m: SparseCountMatrix,
    min_genes_per_cell: int = 300,
    min_cells_per_gene: int = 5,
) -> tuple[SparseCountMatrix, FilterReport]:
    """Remove low-complexity cells, then rarely expressed genes.

    Cells are evaluated on the original matrix (number of genes with a
    positive count); genes are then evaluated on the retained cells.  Each
    criterion is applied once, cells first.
    """
    if min_genes_per_cell < 0 or min_cells_per_gene < 0:
        raise ValidationError("filter thresholds must be >= 0")

    keep_cells = m.genes_per_cell() >= min_genes_per_cell
    if not keep_cells.any():
        raise FilterError(
            f"all {m.n_cells} cells express fewer than {min_genes_per_cell} genes"
        )
    filtered = m.subset_cells(keep_cells) if not keep_cells.all() else m

    keep_genes = filtered.cells_per_gene() >= min_cells_per_gene
    if not keep_genes.any():
        raise FilterError(
            f"all {m.n_genes} genes are expressed in fewer than {min_cells_per_gene} cells"
        )
    if not keep_genes.all():
        filtered = filtered.subset_genes(keep_genes)

    report = FilterReport(
        cells_removed=int((~keep_cells).sum()),
        genes_removed=int((~keep_genes).sum()),
        genes_selected=int(keep_genes.sum()),
        criteria={
            "min_genes_per_cell": min_genes_per_cell,
            "min_cells_per_gene": min_cells_per_gene,
        },
    )
    return filtered, report


def select_top_variable_genes(m: SparseCountMatrix, n: int) -> SparseCountMatrix:
    """Keep the n genes with the largest sample standard deviation of raw counts.

    Ties break toward the lower gene index; the surviving genes keep their
    original order.
    """
    if not 1 <= n <= m.n_genes:
        raise ValidationError(f"n must be in [1, {m.n_genes}], got {n}")
    sd = m.gene_count_sd()
    order = np.argsort(-sd, kind="stable")  # stable: ties resolve to lower index
    keep = np.zeros(m.n_genes, dtype=bool)
    keep[order[:n]] = True
    if keep.all():
        return m
    return m.subset_genes(keep)
