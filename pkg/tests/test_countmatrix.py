import numpy as np
import pytest

from umimix import (
    FilterError,
    MatrixFormatError,
    SparseCountMatrix,
    ValidationError,
    filter_cells_and_genes,
    load_dense_tsv,
    load_sparse_matrix,
    select_top_variable_genes,
    write_dense_tsv,
    write_matrix_market,
)
from conftest import random_count_matrix
from oracles import dense_filter_oracle

MM_HEADER = "%%MatrixMarket matrix coordinate integer general"


def write_mm(tmp_path, body, genes=("g1", "g2", "g3"), cells=("c1", "c2")):
    matrix = tmp_path / "matrix.mtx"
    matrix.write_text(body)
    gene_path = tmp_path / "genes.tsv"
    gene_path.write_text("".join(f"{g}\n" for g in genes))
    cell_path = tmp_path / "barcodes.tsv"
    cell_path.write_text("".join(f"{c}\n" for c in cells))
    return matrix, gene_path, cell_path


class TestLoadSparse:
    def test_reads_coordinates_and_totals(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 2\n1 1 5\n3 2 2\n")
        m = load_sparse_matrix(*paths)
        assert (m.n_genes, m.n_cells) == (3, 2)
        np.testing.assert_array_equal(m.cell_totals, [5, 2])
        assert m.to_dense()[0, 0] == 5
        assert m.to_dense()[2, 1] == 2

    def test_empty_coordinate_list(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 0\n")
        m = load_sparse_matrix(*paths)
        assert m.nnz == 0
        np.testing.assert_array_equal(m.cell_totals, [0, 0])
        np.testing.assert_array_equal(m.to_dense(), np.zeros((3, 2), dtype=int))

    def test_gene_file_length_mismatch(self, tmp_path):
        paths = write_mm(
            tmp_path, f"{MM_HEADER}\n3 2 0\n", genes=("g1", "g2", "g3", "g4")
        )
        with pytest.raises(MatrixFormatError, match="4 lines"):
            load_sparse_matrix(*paths)

    def test_bad_header(self, tmp_path):
        paths = write_mm(tmp_path, "%%MatrixMarket matrix array real general\n3 2 0\n")
        with pytest.raises(MatrixFormatError, match="header"):
            load_sparse_matrix(*paths)

    def test_negative_count(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 1\n1 1 -4\n")
        with pytest.raises(MatrixFormatError, match="negative"):
            load_sparse_matrix(*paths)

    def test_non_integer_count(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 1\n1 1 2.5\n")
        with pytest.raises(MatrixFormatError, match="non-integer"):
            load_sparse_matrix(*paths)

    def test_duplicate_coordinate(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 2\n1 1 5\n1 1 3\n")
        with pytest.raises(MatrixFormatError, match="duplicate"):
            load_sparse_matrix(*paths)

    def test_out_of_range_coordinate(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 1\n4 1 5\n")
        with pytest.raises(MatrixFormatError, match="out of range"):
            load_sparse_matrix(*paths)

    def test_entry_count_mismatch(self, tmp_path):
        paths = write_mm(tmp_path, f"{MM_HEADER}\n3 2 2\n1 1 5\n")
        with pytest.raises(MatrixFormatError, match="promises"):
            load_sparse_matrix(*paths)

    def test_id_files_keep_first_tab_field(self, tmp_path):
        paths = write_mm(
            tmp_path,
            f"{MM_HEADER}\n3 2 0\n",
            genes=("ENSG1\tSYMB1", "ENSG2\tSYMB2", "ENSG3\tSYMB3"),
        )
        m = load_sparse_matrix(*paths)
        assert m.gene_ids == ["ENSG1", "ENSG2", "ENSG3"]


class TestLoadDense:
    def test_table_shaped_input(self, tmp_path):
        path = tmp_path / "counts.tsv"
        path.write_text(
            "\tCell1\tCell2\tCell3\n"
            "Gene1\t0\t0\t0\n"
            "Gene2\t1\t0\t1\n"
            "Gene3\t23\t12\t9\n"
        )
        m = load_dense_tsv(path)
        assert m.cell_ids == ["Cell1", "Cell2", "Cell3"]
        dense = m.to_dense()
        np.testing.assert_array_equal(dense[2], [23, 12, 9])
        np.testing.assert_array_equal(m.cell_totals, [24, 12, 10])

    def test_header_without_corner_label(self, tmp_path):
        path = tmp_path / "counts.tsv"
        path.write_text("Cell1\tCell2\nGeneA\t1\t2\n")
        m = load_dense_tsv(path)
        assert m.cell_ids == ["Cell1", "Cell2"]
        assert m.gene_ids == ["GeneA"]

    def test_all_zero_body(self, tmp_path):
        path = tmp_path / "counts.tsv"
        path.write_text("\tC1\tC2\nG1\t0\t0\nG2\t0\t0\n")
        m = load_dense_tsv(path)
        assert m.nnz == 0

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "counts.tsv"
        path.write_text("\tC1\tC2\nG1\t1\t2\nG2\t3\n")
        with pytest.raises(MatrixFormatError, match="ragged"):
            load_dense_tsv(path)

    def test_non_integer_body(self, tmp_path):
        path = tmp_path / "counts.tsv"
        path.write_text("\tC1\tC2\nG1\t1\t2.7\n")
        with pytest.raises(MatrixFormatError, match="non-integer"):
            load_dense_tsv(path)


class TestRoundTrip:
    def test_sparse_to_dense_to_sparse(self, tmp_path):
        rng = np.random.default_rng(11)
        m = random_count_matrix(rng, n_genes=6, n_cells=5)
        dense_path = tmp_path / "dense.tsv"
        write_dense_tsv(m, dense_path)
        again = load_dense_tsv(dense_path)
        assert m.equals(again)

    def test_matrix_market_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        m = random_count_matrix(rng, n_genes=7, n_cells=4)
        paths = (tmp_path / "m.mtx", tmp_path / "g.tsv", tmp_path / "b.tsv")
        write_matrix_market(m, *paths)
        again = load_sparse_matrix(*paths)
        assert m.equals(again)

    def test_totals_match_recomputed_sums_after_transforms(self):
        rng = np.random.default_rng(13)
        m = random_count_matrix(rng, n_genes=8, n_cells=6)
        filtered, _ = filter_cells_and_genes(m, 1, 1)
        np.testing.assert_array_equal(
            filtered.cell_totals, filtered.to_dense().sum(axis=0)
        )
        top = select_top_variable_genes(filtered, max(1, filtered.n_genes - 2))
        np.testing.assert_array_equal(top.cell_totals, top.to_dense().sum(axis=0))


class TestValidation:
    def test_rejects_zero_stored_count(self):
        with pytest.raises(ValidationError):
            SparseCountMatrix(["g1"], ["c1"], [0], [0], [0])

    def test_rejects_duplicate_coordinates(self):
        with pytest.raises(ValidationError):
            SparseCountMatrix(["g1"], ["c1", "c2"], [0, 0], [0, 0], [1, 2])

    def test_rejects_empty_dimensions(self):
        with pytest.raises(ValidationError):
            SparseCountMatrix([], ["c1"], [], [], [])


class TestFilter:
    def test_zero_thresholds_are_identity(self, table1_matrix):
        filtered, report = filter_cells_and_genes(table1_matrix, 0, 0)
        assert filtered.equals(table1_matrix)
        assert report.cells_removed == 0
        assert report.genes_removed == 0
        assert report.genes_selected == table1_matrix.n_genes

    def test_cell_threshold(self):
        # cell 1 expresses 2 genes, cell 2 expresses 5
        dense = np.zeros((6, 2), dtype=int)
        dense[:2, 0] = 1
        dense[:5, 1] = 1
        m = SparseCountMatrix.from_dense(dense)
        filtered, report = filter_cells_and_genes(m, min_genes_per_cell=3, min_cells_per_gene=0)
        assert filtered.n_cells == 1
        assert filtered.cell_ids == [m.cell_ids[1]]
        assert report.cells_removed == 1

    def test_gene_threshold_against_bruteforce(self):
        rng = np.random.default_rng(5)
        dense = (rng.random((8, 10)) < 0.4).astype(int) * rng.integers(1, 5, (8, 10))
        dense[:, dense.sum(axis=0) == 0] += 1
        m = SparseCountMatrix.from_dense(dense)
        keep_genes, keep_cells = dense_filter_oracle(dense, 2, 5)
        filtered, _ = filter_cells_and_genes(m, 2, 5)
        assert filtered.gene_ids == [m.gene_ids[i] for i in keep_genes]
        assert filtered.cell_ids == [m.cell_ids[j] for j in keep_cells]
        np.testing.assert_array_equal(
            filtered.to_dense(), dense[np.ix_(keep_genes, keep_cells)]
        )

    def test_filtering_is_idempotent(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            m = random_count_matrix(rng, n_genes=9, n_cells=12)
            once, _ = filter_cells_and_genes(m, 2, 2)
            twice, report = filter_cells_and_genes(once, 2, 2)
            assert once.equals(twice)
            assert report.cells_removed == 0 and report.genes_removed == 0

    def test_all_cells_removed(self, table1_matrix):
        with pytest.raises(FilterError, match="cells"):
            filter_cells_and_genes(table1_matrix, min_genes_per_cell=10)

    def test_all_genes_removed(self, table1_matrix):
        with pytest.raises(FilterError, match="genes"):
            filter_cells_and_genes(table1_matrix, 0, min_cells_per_gene=5)

    def test_negative_threshold_rejected(self, table1_matrix):
        with pytest.raises(ValidationError):
            filter_cells_and_genes(table1_matrix, -1, 0)


class TestSelectTopVariableGenes:
    def test_full_selection_is_identity(self, table1_matrix):
        assert select_top_variable_genes(table1_matrix, table1_matrix.n_genes).equals(
            table1_matrix
        )

    def test_keeps_highest_standard_deviation(self):
        # sd of (0,0,10) is 5.77, sd of (3,3,3) is 0
        dense = np.array([[0, 0, 10], [3, 3, 3]])
        m = SparseCountMatrix.from_dense(dense, gene_ids=["varying", "flat"])
        kept = select_top_variable_genes(m, 1)
        assert kept.gene_ids == ["varying"]
        np.testing.assert_allclose(m.gene_count_sd(), [np.std([0, 0, 10], ddof=1), 0.0])

    def test_tie_breaks_to_lower_index(self):
        dense = np.array([[1, 5], [1, 5], [0, 0]])
        m = SparseCountMatrix.from_dense(dense, gene_ids=["first", "second", "zero"])
        kept = select_top_variable_genes(m, 1)
        assert kept.gene_ids == ["first"]

    def test_survivors_keep_original_order(self):
        dense = np.array([[0, 9], [1, 1], [0, 5]])
        m = SparseCountMatrix.from_dense(dense, gene_ids=["a", "b", "c"])
        kept = select_top_variable_genes(m, 2)
        assert kept.gene_ids == ["a", "c"]

    def test_invariant_to_cell_order(self):
        rng = np.random.default_rng(7)
        m = random_count_matrix(rng, n_genes=10, n_cells=8)
        perm = rng.permutation(m.n_cells)
        dense = m.to_dense()[:, perm]
        shuffled = SparseCountMatrix.from_dense(
            dense, gene_ids=m.gene_ids, cell_ids=[m.cell_ids[p] for p in perm]
        )
        assert (
            select_top_variable_genes(m, 4).gene_ids
            == select_top_variable_genes(shuffled, 4).gene_ids
        )

    def test_out_of_range(self, table1_matrix):
        with pytest.raises(ValidationError):
            select_top_variable_genes(table1_matrix, 0)
        with pytest.raises(ValidationError):
            select_top_variable_genes(table1_matrix, 99)
