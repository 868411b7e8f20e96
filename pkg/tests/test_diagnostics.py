import numpy as np
import pytest

from umimix import (
    AlphaVector,
    SimulationSpec,
    ValidationError,
    beta_marginal_table,
    mean_variance_regression,
    simulate,
)


def single_cluster(profile, n_cells, depth, seed):
    profile = np.asarray(profile, dtype=float)
    spec = SimulationSpec(
        n_clusters=1,
        n_genes=profile.size,
        n_cells=n_cells,
        cluster_proportions=np.array([1.0]),
        alphas=[AlphaVector(profile)],
        depth=depth,
        n_informative_genes=0,
        seed=seed,
    )
    return simulate(spec)[0], spec.alphas[0]


def geometric_profile(n_genes, top, total):
    values = top * 0.98 ** np.arange(n_genes)
    return values * (total / values.sum())


class TestBetaMarginalTable:
    def test_uniform_marginal_is_flat(self):
        m, _ = single_cluster([1.0, 1.0], n_cells=4000, depth=500, seed=1)
        alpha = AlphaVector(np.array([1.0, 1.0]))
        table = beta_marginal_table(m, np.arange(m.n_cells), alpha, gene=0, n_bins=10)
        np.testing.assert_allclose(table.theoretical_density, 1.0, rtol=1e-9)
        # densities integrate to ~1 over the covered range
        widths = np.diff(table.bin_edges)
        assert (table.theoretical_density * widths).sum() == pytest.approx(1.0, abs=0.01)
        assert (table.empirical_density * widths).sum() == pytest.approx(1.0, abs=1e-9)

    def test_matches_simulated_proportions(self):
        profile = np.array([5.0, 20.0, 75.0])
        m, alpha = single_cluster(profile, n_cells=4000, depth=2000, seed=2)
        table = beta_marginal_table(m, np.arange(m.n_cells), alpha, gene=0, n_bins=12)
        assert table.a == 5.0
        assert table.b == 95.0
        assert table.total_variation() < 0.05

    def test_requires_two_members(self):
        m, alpha = single_cluster([2.0, 2.0], n_cells=10, depth=100, seed=3)
        with pytest.raises(ValidationError):
            beta_marginal_table(m, [0], alpha, gene=0)

    def test_gene_out_of_range(self):
        m, alpha = single_cluster([2.0, 2.0], n_cells=10, depth=100, seed=4)
        with pytest.raises(ValidationError):
            beta_marginal_table(m, np.arange(10), alpha, gene=5)


class TestMeanVarianceRegression:
    def test_recovers_dirichlet_line(self):
        profile = geometric_profile(600, top=2.0, total=80.0)
        m, _ = single_cluster(profile, n_cells=1500, depth=1500, seed=5)
        fit = mean_variance_regression(m, np.arange(m.n_cells), top_fraction=0.08)
        assert 0.9 <= fit.slope <= 1.1
        assert fit.intercept == pytest.approx(-np.log(81.0), abs=0.3)
        assert fit.expected_slope == 1.0
        # the Ronning-based reference line lands near the true one
        assert fit.expected_intercept == pytest.approx(-np.log(81.0), abs=0.4)

    def test_pure_dirichlet_draws_follow_the_line(self):
        # no multinomial layer: draw proportions directly and regress
        rng = np.random.default_rng(6)
        profile = geometric_profile(300, top=1.5, total=50.0)
        p = rng.dirichlet(profile, size=4000)
        mean = p.mean(axis=0)
        var = p.var(axis=0, ddof=1)
        keep = (mean > 0) & (var > 0) & (mean < 0.02)
        slope, intercept = np.polyfit(np.log(mean[keep]), np.log(var[keep]), 1)
        assert slope == pytest.approx(1.0, abs=0.05)
        assert intercept == pytest.approx(-np.log(51.0), abs=0.15)

    def test_insufficient_genes(self):
        m, _ = single_cluster([3.0, 4.0], n_cells=50, depth=100, seed=7)
        with pytest.raises(ValidationError, match="usable genes"):
            mean_variance_regression(m, np.arange(m.n_cells), top_fraction=1.0)

    def test_invariant_to_cell_order(self):
        profile = geometric_profile(200, top=2.0, total=60.0)
        m, _ = single_cluster(profile, n_cells=300, depth=500, seed=8)
        rng = np.random.default_rng(9)
        members = np.arange(m.n_cells)
        fit_a = mean_variance_regression(m, members, top_fraction=0.2)
        fit_b = mean_variance_regression(m, rng.permutation(members), top_fraction=0.2)
        assert fit_a.slope == pytest.approx(fit_b.slope, rel=1e-12)
        assert fit_a.intercept == pytest.approx(fit_b.intercept, rel=1e-12)

    def test_inputs_are_not_mutated(self):
        profile = geometric_profile(200, top=2.0, total=60.0)
        m, _ = single_cluster(profile, n_cells=200, depth=400, seed=10)
        before = m.counts.copy()
        mean_variance_regression(m, np.arange(m.n_cells), top_fraction=0.2)
        beta_marginal_table(
            m, np.arange(m.n_cells), AlphaVector(profile), gene=0, n_bins=8
        )
        np.testing.assert_array_equal(m.counts, before)
