import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastslow.numerics import layer_norm, log_softmax, log_sum_exp, masked_attention

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
vectors = st.lists(finite, min_size=1, max_size=12)


def dense_masked_attention(q, k, v, mask):
    q, k, v = (np.asarray(a, np.float64) for a in (q, k, v))
    logits = q @ k.T / math.sqrt(q.shape[1])
    logits = np.where(mask, logits, -np.inf)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    return (w / w.sum(axis=1, keepdims=True)) @ v


class TestLogSumExp:
    def test_single_element(self):
        assert log_sum_exp([0.0]) == 0.0

    def test_pair(self):
        assert log_sum_exp([1.5, 1.5]) == pytest.approx(1.5 + math.log(2), abs=1e-12)

    def test_large_values_do_not_overflow(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2), abs=1e-9)

    def test_all_neg_inf(self):
        assert log_sum_exp([-math.inf, -math.inf]) == -math.inf

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            log_sum_exp([])

    @given(vectors)
    def test_bounds(self, v):
        out = log_sum_exp(v)
        assert max(v) - 1e-9 <= out <= max(v) + math.log(len(v)) + 1e-9

    @given(finite, st.integers(1, 10))
    def test_bound_tight_when_equal(self, a, n):
        assert log_sum_exp([a] * n) == pytest.approx(a + math.log(n), abs=1e-9)


class TestLogSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(log_softmax([3.0] * 4), [-math.log(4)] * 4, atol=1e-12)

    def test_singleton(self):
        assert log_softmax([7.3]).tolist() == [0.0]

    def test_matches_direct_evaluation(self):
        x = [1.0, 2.0, 3.0]
        denom = sum(math.exp(v) for v in x)
        np.testing.assert_allclose(log_softmax(x), [math.log(math.exp(v) / denom) for v in x], atol=1e-14)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            log_softmax([0.0, math.inf])

    @given(vectors, st.floats(-100, 100))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(log_softmax(np.array(v) + c), log_softmax(v), atol=1e-6)

    @given(vectors)
    def test_normalised(self, v):
        assert log_sum_exp(log_softmax(v)) == pytest.approx(0.0, abs=1e-9)


class TestMaskedAttention:
    def test_single_key_returns_value(self):
        v = np.array([[1.0, -2.0, 3.0]])
        out = masked_attention(np.ones((1, 2)), np.ones((1, 2)), v, np.array([[True]]))
        np.testing.assert_allclose(out, v)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(0)
        k = np.tile(rng.standard_normal((1, 4)), (5, 1))
        v = rng.standard_normal((5, 3))
        out = masked_attention(rng.standard_normal((2, 4)), k, v)
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_band_mask_matches_dense_oracle(self):
        rng = np.random.default_rng(1)
        q, k, v = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal((5, 2))
        mask = np.array([[abs(i + 1 - j) <= 1 for j in range(5)] for i in range(3)])
        np.testing.assert_allclose(masked_attention(q, k, v, mask), dense_masked_attention(q, k, v, mask), atol=1e-12)

    def test_empty_row_rejected(self):
        with pytest.raises(ValueError, match="no visible context"):
            masked_attention(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), np.array([[True, False], [False, False]]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            masked_attention(np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_masked_rows_are_irrelevant(self, seed):
        rng = np.random.default_rng(seed)
        q, k, v = rng.standard_normal((3, 4)), rng.standard_normal((6, 4)), rng.standard_normal((6, 2))
        mask = np.ones((3, 6), bool)
        mask[:, 3:] = False
        perm = np.concatenate([np.arange(3), 3 + rng.permutation(3)])
        k2, v2 = k[perm].copy(), v[perm].copy()
        k2[3:] = rng.standard_normal((3, 4))  # contents of hidden rows must not matter either
        np.testing.assert_allclose(masked_attention(q, k, v, mask), masked_attention(q, k2, v2, mask), atol=1e-12)

    def test_float32_preserved(self):
        a = np.ones((2, 4), np.float32)
        assert masked_attention(a, a, a).dtype == np.float32


def test_layer_norm_zero_mean_unit_variance():
    x = np.random.default_rng(2).standard_normal((4, 16))
    y = layer_norm(x, np.ones(16), np.zeros(16))
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-3)
