import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attn_mirror import (
    AttnSample,
    ModelParams,
    NearZero,
    TrainConfig,
    attn_forward,
    attn_probs,
    globally_optimal_tokens,
    softmax,
    solve_att_svm,
    token_scores,
    train_joint,
)
from attn_mirror.errors import DimensionError

finite = st.floats(-30, 30, allow_nan=False)


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)

    def test_ratio(self):
        assert np.allclose(softmax([0.7, 0.7 + math.log(2)]), [1 / 3, 2 / 3], atol=1e-14)

    def test_large_logits(self):
        s = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(s))
        assert s[0] == 1.0 and s[1] == pytest.approx(math.exp(-1000.0), abs=1e-300)

    def test_empty(self):
        with pytest.raises(DimensionError):
            softmax([])

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 5, elements=finite), st.floats(-1e3, 1e3))
    def test_shift_invariance_and_simplex(self, x, c):
        s = softmax(x)
        assert abs(s.sum() - 1.0) <= 1e-12
        assert s.min() > 0
        assert np.max(np.abs(softmax(x + c) - s)) <= 1e-12


class TestAttention:
    def test_zero_W_uniform(self, ex2):
        for s in ex2.samples:
            assert np.allclose(attn_probs(np.zeros((2, 2)), s), 1 / 3, atol=1e-15)

    def test_scaled_max_margin_selects_token(self, ex1):
        ds, alpha = ex1
        Wmm = solve_att_svm(ds, alpha, 2).weights
        for s, a in zip(ds.samples, alpha):
            assert attn_probs(20 * Wmm, s)[a] > 0.99

    def test_identical_rows_tie(self, rng):
        X = rng.standard_normal((4, 3))
        X[2] = X[0]
        s = AttnSample(X, 1, rng.standard_normal(3))
        p = attn_probs(rng.standard_normal((3, 3)), s)
        assert p[0] == p[2]

    def test_shape_mismatch(self, ex2):
        with pytest.raises(DimensionError):
            attn_probs(np.zeros((3, 3)), ex2.samples[0])

    def test_forward_zero_head(self, ex2, rng):
        params = ModelParams(rng.standard_normal((2, 2)), np.zeros(2))
        assert attn_forward(params, ex2.samples[0]) == 0.0

    def test_forward_uniform_attention(self, ex2):
        v = np.array([0.3, -1.2])
        s = ex2.samples[1]
        assert attn_forward(ModelParams(np.zeros((2, 2)), v), s) == pytest.approx(np.mean(s.X @ v), abs=1e-14)

    def test_joint_training_classifies(self, ex2):
        params, _ = train_joint(ex2, 2.0, TrainConfig(eta=0.1, max_iters=2000, init=NearZero(1e-3, 0)))
        for s in ex2.samples:
            assert s.y * attn_forward(params, s) > 0

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, 2, elements=finite), arrays(np.float64, 2, elements=finite), st.floats(-5, 5))
    def test_linear_in_head(self, v1, v2, c):
        from attn_mirror import example2_dataset

        s = example2_dataset().samples[0]
        W = np.array([[0.1, -0.2], [0.3, 0.05]])
        lhs = attn_forward(ModelParams(W, v1 + c * v2), s)
        rhs = attn_forward(ModelParams(W, v1), s) + c * attn_forward(ModelParams(W, v2), s)
        assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(lhs)))


class TestScores:
    def test_zero_head(self, ex2):
        assert np.all(token_scores(np.zeros(2), ex2.samples[0]) == 0)

    def test_label_flip(self, rng):
        X, z = rng.standard_normal((3, 2)), rng.standard_normal(2)
        v = rng.standard_normal(2)
        assert np.array_equal(token_scores(v, AttnSample(X, -1, z)), -token_scores(v, AttnSample(X, 1, z)))

    def test_example2_first_column(self, ex2):
        assert np.allclose(token_scores([1.0, 0.0], ex2.samples[0]), [-5.4, 2.8, 2.6], atol=1e-15)

    def test_optimal_tokens(self, ex2):
        assert globally_optimal_tokens(np.zeros(2), ex2).tolist() == [0, 0]
        assert globally_optimal_tokens(np.array([1.0, 0.0]), ex2)[0] == 1

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, 2, elements=finite), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, v, c):
        from attn_mirror import example2_dataset

        ds = example2_dataset()
        top2 = np.sort(ds.y[:, None] * (ds.X @ v), axis=1)[:, -2:]
        assume(np.all(top2[:, 1] - top2[:, 0] > 1e-9))
        assert np.array_equal(globally_optimal_tokens(c * v, ds), globally_optimal_tokens(v, ds))
