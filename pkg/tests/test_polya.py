import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umimix import (
    AlphaVector,
    ValidationError,
    beta_marginal_params,
    dirichlet_mean_variance,
    log_polya_likelihood,
)
from oracles import compositions, polya_prob_exact


class TestAlphaVector:
    def test_precision_is_cached_sum(self):
        a = AlphaVector(np.array([0.5, 1.5, 2.0]))
        assert a.precision == pytest.approx(4.0, rel=1e-12)

    def test_rejects_non_positive(self):
        with pytest.raises(ValidationError):
            AlphaVector(np.array([1.0, 0.0]))
        with pytest.raises(ValidationError):
            AlphaVector(np.array([1.0, -2.0]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            AlphaVector(np.array([1.0, np.nan]))

    def test_floored_clamps_small_values(self):
        a = AlphaVector.floored(np.array([0.0, 1e-20, 2.0]), floor=1e-10)
        assert a.values[0] == 1e-10
        assert a.values[1] == 1e-10
        assert a.values[2] == 2.0

    def test_values_are_immutable(self):
        a = AlphaVector(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            a.values[0] = 5.0


class TestLogPolyaLikelihood:
    def test_symmetric_ones_is_uniform_over_compositions(self):
        # with all-ones alpha every composition of T is equally likely
        a = AlphaVector(np.ones(2))
        got = log_polya_likelihood(np.array([1, 1]), a, include_multinomial_coefficient=True)
        assert got == pytest.approx(math.log(1.0 / 3.0), abs=1e-12)

    def test_single_category_is_certain(self):
        a = AlphaVector(np.array([7.3]))
        assert log_polya_likelihood(np.array([5]), a) == pytest.approx(0.0, abs=1e-12)
        assert log_polya_likelihood(
            np.array([5]), a, include_multinomial_coefficient=True
        ) == pytest.approx(0.0, abs=1e-12)

    def test_matches_exact_gamma_arithmetic(self):
        a = AlphaVector(np.array([2.0, 1.0, 1.0]))
        x = np.array([2, 0, 1])
        expected = float(polya_prob_exact(x, [2, 1, 1], include_coefficient=True))
        got = log_polya_likelihood(x, a, include_multinomial_coefficient=True)
        assert math.exp(got) == pytest.approx(expected, rel=1e-12)
        # same check without the coefficient
        expected_nc = float(polya_prob_exact(x, [2, 1, 1], include_coefficient=False))
        got_nc = log_polya_likelihood(x, a)
        assert math.exp(got_nc) == pytest.approx(expected_nc, rel=1e-12)

    def test_normalizes_over_compositions(self):
        a = AlphaVector(np.array([0.7, 1.3, 2.1]))
        total = sum(
            math.exp(
                log_polya_likelihood(np.array(x), a, include_multinomial_coefficient=True)
            )
            for x in compositions(5, 3)
        )
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_rejects_all_zero_counts(self):
        with pytest.raises(ValidationError):
            log_polya_likelihood(np.array([0, 0]), AlphaVector(np.ones(2)))

    def test_rejects_negative_and_length_mismatch(self):
        a = AlphaVector(np.ones(2))
        with pytest.raises(ValidationError):
            log_polya_likelihood(np.array([1, -1]), a)
        with pytest.raises(ValidationError):
            log_polya_likelihood(np.array([1, 1, 1]), a)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_invariant_under_joint_permutation(self, data):
        g = data.draw(st.integers(2, 5))
        x = np.array(data.draw(st.lists(st.integers(0, 5), min_size=g, max_size=g)))
        if x.sum() == 0:
            x[0] = 1
        alpha = np.array(
            data.draw(
                st.lists(
                    st.floats(0.05, 10.0, allow_nan=False), min_size=g, max_size=g
                )
            )
        )
        perm = np.array(data.draw(st.permutations(range(g))))
        base = log_polya_likelihood(x, AlphaVector(alpha), True)
        permuted = log_polya_likelihood(x[perm], AlphaVector(alpha[perm]), True)
        assert permuted == pytest.approx(base, rel=1e-10, abs=1e-10)

    def test_zero_count_gene_with_tiny_alpha_is_continuous(self):
        # appending an unexpressed gene with alpha -> 0 while holding the
        # total concentration converges to the original likelihood
        alpha = np.array([2.0, 3.0])
        x = np.array([4, 2])
        base = log_polya_likelihood(x, AlphaVector(alpha), True)
        gaps = []
        for eps in (1e-3, 1e-6):
            scaled = alpha * (alpha.sum() - eps) / alpha.sum()
            extended = AlphaVector(np.append(scaled, eps))
            got = log_polya_likelihood(np.append(x, 0), extended, True)
            gaps.append(abs(got - base))
        assert gaps[1] < gaps[0]
        assert gaps[1] < 1e-5

    def test_likelihood_increases_with_alpha_on_concentrated_counts(self):
        x = np.array([6, 0])
        values = [
            log_polya_likelihood(x, AlphaVector(np.array([a1, 1.0])))
            for a1 in (0.5, 1.0, 2.0, 4.0, 8.0)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))


class TestDirichletMoments:
    def test_two_uniform_components(self):
        a = AlphaVector(np.array([1.0, 1.0]))
        mean, var = dirichlet_mean_variance(a, 0)
        assert mean == pytest.approx(0.5, abs=1e-15)
        assert var == pytest.approx(1.0 / 12.0, abs=1e-15)

    def test_symmetric_mean_is_uniform(self):
        g = 7
        a = AlphaVector(np.full(g, 2.5))
        for i in range(g):
            mean, _ = dirichlet_mean_variance(a, i)
            assert mean == pytest.approx(1.0 / g, rel=1e-12)

    def test_large_concentration_shrinks_variance(self):
        small = dirichlet_mean_variance(AlphaVector(np.array([2.0, 2.0])), 0)[1]
        large = dirichlet_mean_variance(AlphaVector(np.array([1e6, 1e6])), 0)[1]
        assert large < small
        assert large < 1e-6

    def test_index_out_of_range(self):
        with pytest.raises(ValidationError):
            dirichlet_mean_variance(AlphaVector(np.ones(2)), 2)


class TestBetaMarginalParams:
    def test_first_component(self):
        a, b = beta_marginal_params(AlphaVector(np.array([2.0, 3.0, 5.0])), 0)
        assert (a, b) == (2.0, 8.0)

    def test_uniform_marginal(self):
        a, b = beta_marginal_params(AlphaVector(np.array([1.0, 1.0])), 1)
        assert (a, b) == (1.0, 1.0)

    def test_parameters_sum_to_precision(self):
        alpha = AlphaVector(np.array([0.3, 2.2, 1.1, 4.4]))
        for i in range(4):
            a, b = beta_marginal_params(alpha, i)
            assert a + b == pytest.approx(alpha.precision, rel=1e-12)

    def test_index_out_of_range(self):
        with pytest.raises(ValidationError):
            beta_marginal_params(AlphaVector(np.ones(3)), -1)
