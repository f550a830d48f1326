import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from durian_e import numerics as nx
from durian_e.layers import (SAIN, Conv1d, LayerNorm, MultiHeadAttention, SwishRNN, gated_activation,
                             layer_norm, multi_head_attention, sain, swish, swishrnn_forward)
from durian_e.numerics import Tensor


def scalar_swish(x, a=1.0, b=0.0):
    return x / (1.0 + math.exp(-(a * x + b)))


class TestSwish:
    def test_zero(self):
        assert swish(0.0, 1.0, 0.0).item() == 0.0

    @pytest.mark.parametrize("x", [10.0, -10.0])
    def test_matches_scalar_evaluation(self, x):
        assert swish(x, 1.0, 0.0).item() == pytest.approx(scalar_swish(x), rel=1e-14)

    def test_reference_values(self):
        assert swish(10.0).item() == pytest.approx(9.99955, abs=5e-6)
        assert swish(-10.0).item() == pytest.approx(-4.54e-4, rel=1e-3)

    def test_differentiable_in_alpha_beta(self):
        x, a, b = Tensor([0.7, -1.3]), Tensor(1.2), Tensor(-0.4)
        assert nx.gradcheck(swish, [x, a, b], tol=1e-6).passed


def make_rnn(rng, d_in, hidden, bias=True):
    p = SwishRNN(rng, d_in, hidden)
    if bias:
        for b in (p.b_c, p.b_sigma, p.b_3):
            b.data = rng.normal(size=hidden)
        p.alpha.data = np.array(rng.uniform(0.5, 1.5))
        p.beta.data = np.array(rng.uniform(-0.5, 0.5))
    return p


def scalar_swishrnn(X, p):
    """Step-by-step, element-by-element oracle of the recurrence and gated output."""
    W1, W2, W3 = p.W1.data, p.W2.data, p.W3.data
    a, b = float(p.alpha.data), float(p.beta.data)
    l, d_in = X.shape
    hidden = W1.shape[1]
    c = [0.0] * hidden
    H = np.zeros((l, hidden))
    for i in range(l):
        gated = []
        for j in range(hidden):
            x1 = sum(X[i, k] * W1[k, j] for k in range(d_in))
            x2 = sum(X[i, k] * W2[k, j] for k in range(d_in))
            c[j] = scalar_swish(c[j] - x1, a, b) + x1
            gated.append((c[j] + p.b_c.data[j]) / (1.0 + math.exp(-(x2 + p.b_sigma.data[j]))))
        for j in range(hidden):
            H[i, j] = sum(gated[k] * W3[k, j] for k in range(hidden)) + p.b_3.data[j]
    return H


class TestSwishRNN:
    def test_zero_input_zero_output(self):
        p = make_rnn(np.random.default_rng(0), 4, 4, bias=False)
        np.testing.assert_array_equal(swishrnn_forward(np.zeros((5, 4)), p).data, 0.0)

    def test_large_input_is_selected(self):
        c = nx.swish_scan(np.array([[1000.0]]), np.zeros(1), 1.0, 0.0)
        assert c.data[0, 0] == pytest.approx(1000.0, abs=1e-9)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        p = make_rnn(rng, 2, 2)
        X = rng.normal(size=(3, 2))
        np.testing.assert_allclose(swishrnn_forward(X, p).data, scalar_swishrnn(X, p), rtol=0, atol=1e-12)

    def test_rectangular_input_projection(self):
        rng = np.random.default_rng(2)
        p = make_rnn(rng, 5, 3)
        X = rng.normal(size=(4, 5))
        np.testing.assert_allclose(swishrnn_forward(X, p).data, scalar_swishrnn(X, p), atol=1e-12)

    def test_hidden_mismatch_raises(self):
        p = make_rnn(np.random.default_rng(0), 4, 4)
        with pytest.raises(nx.ShapeError):
            swishrnn_forward(np.zeros((3, 5)), p)

    @settings(max_examples=200, deadline=None)
    @given(prev=st.floats(-50, 50), gap=st.floats(20, 200), sign=st.sampled_from([-1.0, 1.0]))
    def test_pooling_limit(self, prev, gap, sign):
        x1 = prev + sign * gap
        c = nx.swish_scan(np.array([[x1]]), np.array([prev]), 1.0, 0.0).data[0, 0]
        assert abs(c - max(prev, x1)) < 1e-3

    def test_gradcheck_random_4x3(self):
        rng = np.random.default_rng(3)
        p = make_rnn(rng, 3, 3)
        X = Tensor(rng.normal(size=(4, 3)))
        params = [X] + p.parameters()
        report = nx.gradcheck(lambda *_: swishrnn_forward(X, p), params, tol=1e-4)
        assert report.passed, report


def brute_attention(X, p, mask):
    hidden = X.shape[1]
    dh = hidden // p.heads
    Q = X @ p.Wq.data + p.bq.data
    K = X @ p.Wk.data + p.bk.data
    V = X @ p.Wv.data + p.bv.data
    out = np.zeros_like(X)
    for h in range(p.heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(len(X)):
            scores = [float(Q[i, cols] @ K[j, cols]) / math.sqrt(dh) if mask[j] else -math.inf
                      for j in range(len(X))]
            m = max(scores)
            w = [math.exp(s - m) for s in scores]
            z = sum(w)
            out[i, cols] = sum((w[j] / z) * V[j, cols] for j in range(len(X)))
    return out @ p.Wo.data + p.bo.data


class TestAttention:
    def test_single_position(self):
        rng = np.random.default_rng(0)
        p = MultiHeadAttention(rng, 4, 2)
        X = rng.normal(size=(1, 4))
        expected = (X @ p.Wv.data + p.bv.data) @ p.Wo.data + p.bo.data
        np.testing.assert_allclose(p(X).data, expected, atol=1e-14)

    def test_identical_rows_uniform_weights(self):
        p = MultiHeadAttention(np.random.default_rng(1), 4, 2)
        X = np.tile(np.random.default_rng(2).normal(size=(1, 4)), (5, 1))
        mask = np.array([True, True, True, False, False])
        _, weights = multi_head_attention(X, p, mask, return_weights=True)
        for w in weights:
            np.testing.assert_allclose(w.data[:, :3], 1 / 3, atol=1e-15)
            np.testing.assert_array_equal(w.data[:, 3:], 0.0)

    @pytest.mark.parametrize("mask", [[1, 1, 1, 1], [1, 1, 0, 1]])
    def test_matches_brute_force(self, mask):
        rng = np.random.default_rng(3)
        p = MultiHeadAttention(rng, 4, 2)
        X = rng.normal(size=(4, 4))
        mask = np.array(mask, dtype=bool)
        np.testing.assert_allclose(p(X, mask).data, brute_attention(X, p, mask), atol=1e-10)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        p = MultiHeadAttention(rng, 6, 2)
        mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
        _, weights = multi_head_attention(rng.normal(size=(6, 6)), p, mask, return_weights=True)
        for w in weights:
            np.testing.assert_allclose(w.data[:, mask].sum(axis=1), 1.0, atol=1e-12)

    def test_mask_length_mismatch(self):
        p = MultiHeadAttention(np.random.default_rng(0), 4, 2)
        with pytest.raises(ValueError, match="mask length"):
            p(np.zeros((3, 4)), np.ones(4, dtype=bool))

    def test_heads_must_divide_hidden(self):
        with pytest.raises(ValueError):
            MultiHeadAttention(np.random.default_rng(0), 5, 2)

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        p = MultiHeadAttention(rng, 4, 2)
        X = Tensor(rng.normal(size=(3, 4)))
        mask = np.array([1, 1, 0], dtype=bool)
        assert nx.gradcheck(lambda *_: p(X, mask), [X] + p.parameters(), tol=1e-4).passed


def unit_sain(rng, channels, style_dim=3):
    p = SAIN(rng, style_dim, channels)
    p.G_proj.data[:] = 0.0
    p.B_proj.data[:] = 0.0
    return p


class TestSAIN:
    def test_constant_channel_maps_to_bias(self):
        rng = np.random.default_rng(0)
        p = SAIN(rng, 3, 4)
        s = rng.normal(size=3)
        x = rng.normal(size=(6, 4))
        x[:, 2] = 1.7
        _, B = p.gain_bias(s)
        out = sain(x, s, p).data
        np.testing.assert_allclose(out[:, 2], B.data[0, 2], atol=1e-15)

    def test_unit_gain_zero_bias_standardizes(self):
        rng = np.random.default_rng(1)
        p = unit_sain(rng, 4)
        out = sain(rng.normal(size=(8, 4)), rng.normal(size=3), p).data
        assert np.max(np.abs(out.mean(axis=0))) <= 1e-9
        assert np.max(np.abs(out.std(axis=0) - 1.0)) <= 1e-6

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        p = SAIN(rng, 3, 4)
        x, s = rng.normal(size=(8, 4)), rng.normal(size=3)
        expected = np.zeros((8, 4))
        for c in range(4):
            g = sum(s[k] * p.G_proj.data[k, c] for k in range(3)) + p.G_bias.data[c]
            b = sum(s[k] * p.B_proj.data[k, c] for k in range(3)) + p.B_bias.data[c]
            col = [x[f, c] for f in range(8)]
            mu = sum(col) / 8
            sd = math.sqrt(max(sum((v - mu) ** 2 for v in col) / 8, p.eps))
            for f in range(8):
                expected[f, c] = g * (col[f] - mu) / sd + b
        np.testing.assert_allclose(sain(x, s, p).data, expected, rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0.05, 20.0), b=st.floats(-10, 10), seed=st.integers(0, 2**16))
    def test_affine_input_invariance(self, a, b, seed):
        rng = np.random.default_rng(seed)
        p = SAIN(rng, 3, 4)
        x, s = rng.normal(size=(8, 4)), rng.normal(size=3)
        np.testing.assert_allclose(sain(a * x + b, s, p).data, sain(x, s, p).data, rtol=0, atol=1e-9)

    def test_normalizes_each_utterance_along_frames(self):
        rng = np.random.default_rng(3)
        p = unit_sain(rng, 2)
        x = rng.normal(size=(5, 2))
        x[:, 1] = 100 * x[:, 1] + 40
        out = sain(x, np.zeros(3), p).data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        p = SAIN(rng, 3, 4)
        x, s = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=3))
        assert nx.gradcheck(lambda *_: sain(x, s, p), [x, s] + p.parameters(), tol=1e-4).passed

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            SAIN(np.random.default_rng(0), 2, 2, eps=0.0)


class TestSmallLayers:
    def test_layer_norm_constant_row(self):
        np.testing.assert_array_equal(layer_norm(np.full((2, 5), 3.3)).data, 0.0)

    def test_conv_delta_kernel_identity(self):
        x = np.random.default_rng(0).normal(size=(7, 3))
        w = np.zeros((9, 3, 3))
        w[4] = np.eye(3)
        np.testing.assert_array_equal(nx.conv1d(x, w).data, x)

    def test_conv_same_length(self):
        conv = Conv1d(np.random.default_rng(0), 3, 5, 9)
        assert conv(np.ones((2, 3))).shape == (2, 5)

    def test_conv_kernel_larger_than_padded_input(self):
        with pytest.raises(nx.ShapeError, match="kernel"):
            nx.conv1d(np.ones((3, 1)), np.ones((9, 1, 1)), padding=0)

    def test_gated_activation_zero(self):
        assert gated_activation(0.0, 0.0).item() == 0.0

    @pytest.mark.parametrize("kernel", [3, 9])
    def test_conv_gradcheck(self, kernel):
        rng = np.random.default_rng(1)
        conv = Conv1d(rng, 2, 3, kernel)
        x = Tensor(rng.normal(size=(5, 2)))
        assert nx.gradcheck(lambda *_: conv(x), [x] + conv.parameters(), tol=1e-4).passed

    def test_layer_norm_gradcheck(self):
        rng = np.random.default_rng(2)
        ln = LayerNorm(4)
        ln.gamma.data = rng.normal(size=4)
        x = Tensor(rng.normal(size=(3, 4)))
        assert nx.gradcheck(lambda *_: ln(x), [x] + ln.parameters(), tol=1e-4).passed

    def test_gated_activation_gradcheck(self):
        rng = np.random.default_rng(3)
        a, b = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 2)))
        assert nx.gradcheck(gated_activation, [a, b], tol=1e-4).passed
