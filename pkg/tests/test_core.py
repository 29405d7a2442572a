import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ambical.core import (
    INF,
    LabeledExample,
    LogitDataset,
    empirical_distribution,
    entropy,
    kl_divergence,
    softmax_t,
    voted_label,
)
from ambical.errors import DomainError, InputError

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


class TestSoftmaxT:
    def test_uniform_for_equal_logits(self):
        np.testing.assert_allclose(softmax_t([0.0, 0.0, 0.0], 1.0), [1 / 3] * 3, atol=1e-15)

    def test_closed_form_two_to_one(self):
        np.testing.assert_allclose(softmax_t([math.log(2.0), 0.0], 1.0), [2 / 3, 1 / 3], atol=1e-15)

    def test_infinite_temperature_limit(self):
        np.testing.assert_allclose(softmax_t([1.0, 0.0], 1e6), [0.5, 0.5], atol=1e-5)

    def test_large_logits_do_not_overflow(self):
        p = softmax_t([1000.0, 0.0, -1000.0], 1.0)
        assert np.all(np.isfinite(p))
        assert abs(p.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("T", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_temperature(self, T):
        with pytest.raises(DomainError):
            softmax_t([1.0, 2.0], T)

    def test_non_finite_logits(self):
        with pytest.raises(InputError):
            softmax_t([1.0, float("inf")], 1.0)

    @given(arrays(np.float64, 5, elements=finite), st.floats(-50, 50), st.floats(0.1, 20))
    def test_shift_invariance(self, z, c, T):
        np.testing.assert_allclose(softmax_t(z + c, T), softmax_t(z, T), atol=1e-12)

    @given(arrays(np.float64, 4, elements=finite), st.floats(0.05, 10), st.floats(0.05, 10))
    def test_entropy_monotone_in_temperature(self, z, T1, T2):
        lo, hi = sorted((T1, T2))
        assert entropy(softmax_t(z, lo)) <= entropy(softmax_t(z, hi)) + 1e-12

    @given(arrays(np.float64, (3, 6), elements=finite), st.floats(0.05, 50))
    def test_rows_sum_to_one(self, z, T):
        np.testing.assert_allclose(softmax_t(z, T).sum(axis=1), 1.0, atol=1e-12)


class TestEmpiricalDistribution:
    def test_counting(self):
        np.testing.assert_allclose(empirical_distribution([1, 1, 2], 3), [0, 2 / 3, 1 / 3])

    def test_single_annotation(self):
        np.testing.assert_array_equal(empirical_distribution([0], 2), [1.0, 0.0])

    def test_even_split(self):
        np.testing.assert_array_equal(empirical_distribution([0, 1, 0, 1], 2), [0.5, 0.5])

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            empirical_distribution([0, 3], 3)

    def test_rejects_small_K(self):
        with pytest.raises(InputError):
            empirical_distribution([0], 1)

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            empirical_distribution([], 3)


class TestVotedLabel:
    @pytest.mark.parametrize(
        "pi, expected",
        [([0.0, 0.7, 0.3], 1), ([1.0, 0.0, 0.0], 0), ([0.5, 0.5], 0), ([0.2, 0.4, 0.4], 1)],
    )
    def test_examples(self, pi, expected):
        assert voted_label(pi) == expected

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
    def test_matches_mode_with_lowest_index(self, a):
        counts = [a.count(k) for k in range(5)]
        mode = min(k for k in range(5) if counts[k] == max(counts))
        assert voted_label(empirical_distribution(a, 5)) == mode


class TestEntropyAndKL:
    def test_one_hot_entropy(self):
        assert entropy([0.0, 1.0, 0.0]) == 0.0

    def test_uniform_entropy(self):
        assert entropy(np.full(10, 0.1)) == pytest.approx(2.302585093, abs=1e-9)

    def test_binary_entropy(self):
        assert entropy([0.7, 0.3]) == pytest.approx(0.610864, abs=1e-5)

    def test_kl_zero_on_equal(self):
        assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0

    def test_kl_one_hot_vs_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.693147, abs=1e-6)

    def test_kl_support_violation(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == INF

    def test_kl_batch(self):
        out = kl_divergence([[1.0, 0.0], [0.5, 0.5]], [[0.5, 0.5], [1.0, 0.0]])
        assert out[0] == pytest.approx(math.log(2))
        assert out[1] == INF

    def test_kl_nonnegative_on_random_pairs(self, rng):
        p = rng.dirichlet(np.ones(4), size=500)
        q = rng.dirichlet(np.ones(4), size=500)
        kl = kl_divergence(p, q)
        assert np.all(kl > 0)
        np.testing.assert_allclose(kl_divergence(p, p), 0.0, atol=1e-15)


class TestLogitDataset:
    def test_from_examples_derives_pi(self):
        ex = [
            LabeledExample("a", np.array([0.0, 1.0, 2.0]), None, np.array([1, 1, 2]), None),
            LabeledExample("b", np.array([1.0, 0.0, 0.0]), None, None, np.array([0.5, 0.5, 0.0])),
        ]
        ds = LogitDataset.from_examples(ex)
        np.testing.assert_allclose(ds.pi[0], [0, 2 / 3, 1 / 3])
        np.testing.assert_array_equal(ds.voted, [1, 0])
        assert ds.n == 2 and ds.K == 3
        assert not ds.has_annotations

    def test_disagreeing_pi_is_rejected(self):
        ex = [LabeledExample("a", np.zeros(2), None, np.array([0, 0]), np.array([0.5, 0.5]))]
        with pytest.raises(InputError):
            LogitDataset.from_examples(ex)

    def test_subset_keeps_alignment(self):
        ds = LogitDataset(np.arange(8.0).reshape(4, 2), np.eye(2)[[0, 1, 1, 0]], list("abcd"))
        sub = ds.subset([3, 1])
        assert sub.ids == ["d", "b"]
        np.testing.assert_array_equal(sub.voted, [0, 1])

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            LogitDataset(np.zeros((2, 3)), np.full((2, 2), 0.5), ["a", "b"])
