import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from limbnet import nn
from limbnet.errors import ShapeError
from oracles import max_rel_error, naive_conv1d, naive_dense, numerical_grad

TOL = 1e-4


def away_from_zero(rng, shape, low=0.1, high=1.0):
    """Random values with magnitude in [low, high] so ReLU kinks stay out of reach."""
    return rng.uniform(low, high, shape) * rng.choice([-1.0, 1.0], shape)


# ---------------------------------------------------------------- conv

class TestConv:
    def test_identity_kernel(self):
        out = nn.conv1d_forward(np.array([[1.0, 2, 3]]), np.array([[[1.0]]]), np.zeros(1), "valid")
        np.testing.assert_array_equal(out, [[1, 2, 3]])

    def test_difference_kernel(self):
        out = nn.conv1d_forward(np.array([[1.0, 2, 3]]), np.array([[[1.0, 0, -1]]]),
                                np.zeros(1), "valid")
        np.testing.assert_array_equal(out, [[-2]])

    def test_zero_input_gives_bias(self, rng):
        b = rng.normal(size=3)
        out = nn.conv1d_forward(np.zeros((2, 10)), rng.normal(size=(3, 2, 5)), b, "same")
        np.testing.assert_array_equal(out, np.repeat(b[:, None], 10, axis=1))

    @pytest.mark.parametrize("padding", ["valid", "same"])
    @pytest.mark.parametrize("c_in,length,c_out,k", [(1, 5, 1, 3), (2, 9, 3, 3), (4, 32, 4, 5),
                                                     (3, 17, 2, 1), (4, 32, 16, 5)])
    def test_matches_naive_oracle_bitwise(self, rng, padding, c_in, length, c_out, k):
        # small integers keep every partial sum exact, so summation order cannot matter
        x = rng.integers(-8, 9, (c_in, length)).astype(float)
        w = rng.integers(-8, 9, (c_out, c_in, k)).astype(float)
        b = rng.integers(-8, 9, c_out).astype(float)
        out = nn.conv1d_forward(x, w, b, padding)
        np.testing.assert_array_equal(out, naive_conv1d(x, w, b, padding))

    @pytest.mark.parametrize("padding", ["valid", "same"])
    def test_matches_naive_oracle_float(self, rng, padding):
        x, w, b = rng.normal(size=(4, 32)), rng.normal(size=(8, 4, 3)), rng.normal(size=8)
        np.testing.assert_allclose(nn.conv1d_forward(x, w, b, padding),
                                   naive_conv1d(x, w, b, padding), rtol=0, atol=1e-12)

    def test_batched_and_grouped_match_single(self, rng):
        x = rng.normal(size=(5, 3, 4, 20))       # batch, group, C_in, L
        w = rng.normal(size=(3, 2, 4, 3))        # group, C_out, C_in, K
        b = rng.normal(size=(3, 2))
        out = nn.conv1d_forward(x, w, b)
        for n in range(5):
            for g in range(3):
                np.testing.assert_allclose(out[n, g], nn.conv1d_forward(x[n, g], w[g], b[g]),
                                           atol=1e-13)

    @pytest.mark.parametrize("bad", [
        dict(x=(2, 10), w=(3, 3, 3), b=(3,)),   # C_in mismatch
        dict(x=(2, 10), w=(3, 2, 3), b=(4,)),   # bias mismatch
        dict(x=(2, 2), w=(3, 2, 3), b=(3,)),    # kernel longer than input (valid)
    ])
    def test_shape_errors(self, bad):
        with pytest.raises(ShapeError):
            nn.conv1d_forward(np.zeros(bad["x"]), np.zeros(bad["w"]), np.zeros(bad["b"]), "valid")

    def test_same_padding_rejects_even_kernel(self):
        with pytest.raises(ShapeError):
            nn.conv1d_forward(np.zeros((1, 8)), np.zeros((1, 1, 4)), np.zeros(1), "same")

    def test_backward_zero_upstream(self, rng):
        x, w = rng.normal(size=(2, 8)), rng.normal(size=(3, 2, 3))
        g = nn.conv1d_backward(x, w, np.zeros((3, 8)))
        for arr in (g["kernels"], g["bias"], g.input):
            assert not np.any(arr)

    def test_backward_hand_chain_rule(self):
        g = nn.conv1d_backward(np.array([[1.0, 2, 3]]), np.array([[[1.0]]]),
                               np.ones((1, 3)), "valid")
        assert g["kernels"][0, 0, 0] == 6.0
        assert g["bias"][0] == 3.0
        np.testing.assert_array_equal(g.input, [[1, 1, 1]])

    def test_backward_rejects_bad_upstream(self, rng):
        with pytest.raises(ShapeError):
            nn.conv1d_backward(rng.normal(size=(2, 8)), rng.normal(size=(3, 2, 3)),
                               np.zeros((3, 7)), "same")

    @pytest.mark.parametrize("padding", ["valid", "same"])
    def test_backward_finite_differences(self, rng, padding):
        x, w, b = rng.normal(size=(3, 11)), rng.normal(size=(2, 3, 3)), rng.normal(size=2)
        up = rng.normal(size=nn.conv1d_forward(x, w, b, padding).shape)

        def loss():
            return float((nn.conv1d_forward(x, w, b, padding) * up).sum())

        g = nn.conv1d_backward(x, w, up, padding)
        assert max_rel_error(g["kernels"], numerical_grad(loss, w)) < TOL
        assert max_rel_error(g["bias"], numerical_grad(loss, b)) < TOL
        assert max_rel_error(g.input, numerical_grad(loss, x)) < TOL


# ---------------------------------------------------------------- pooling

class TestMaxPool:
    def test_hand_max(self):
        out, _ = nn.maxpool1d_forward(np.array([[1.0, 3, 2, 5]]))
        np.testing.assert_array_equal(out, [[3, 5]])

    def test_tie_goes_to_lower_index(self):
        out, arg = nn.maxpool1d_forward(np.array([[7.0, 7]]))
        np.testing.assert_array_equal(out, [[7]])
        assert arg[0, 0] == 0

    def test_odd_trailing_dropped(self):
        out, _ = nn.maxpool1d_forward(np.array([[1.0, 2, 3]]))
        np.testing.assert_array_equal(out, [[2]])

    def test_too_short(self):
        with pytest.raises(ShapeError):
            nn.maxpool1d_forward(np.array([[1.0]]))

    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 40)),
                  elements=st.floats(-1e6, 1e6)))
    def test_fast_path_matches_argmax_path(self, x):
        out, arg = nn.maxpool1d_forward(x)
        np.testing.assert_array_equal(nn.maxpool1d(x), out)
        n = x.shape[1] // 2
        ref = x[:, :2 * n].reshape(x.shape[0], n, 2)
        np.testing.assert_array_equal(out, ref.max(axis=-1))
        np.testing.assert_array_equal(arg, ref.argmax(axis=-1))

    def test_backward_routes_to_argmax(self):
        dx = nn.maxpool1d_backward(np.array([[0]]), np.array([[1.0]]), 2)
        np.testing.assert_array_equal(dx, [[1, 0]])

    def test_backward_zeros(self):
        dx = nn.maxpool1d_backward(np.array([[1, 0]]), np.zeros((1, 2)), 5)
        np.testing.assert_array_equal(dx, np.zeros((1, 5)))

    def test_backward_index_out_of_range(self):
        with pytest.raises(IndexError):
            nn.maxpool1d_backward(np.array([[2]]), np.array([[1.0]]), 2)
        with pytest.raises(IndexError):
            nn.maxpool1d_backward(np.array([[0, 0]]), np.array([[1.0, 1.0]]), 3)

    def test_backward_finite_differences(self, rng):
        # distinct values spaced well beyond the perturbation, so no window is tied
        x = rng.permutation(np.arange(2 * 15, dtype=float)).reshape(2, 15) * 0.1
        out, arg = nn.maxpool1d_forward(x)
        up = rng.normal(size=out.shape)

        def loss():
            return float((nn.maxpool1d_forward(x)[0] * up).sum())

        dx = nn.maxpool1d_backward(arg, up, x.shape[-1])
        assert max_rel_error(dx, numerical_grad(loss, x)) < TOL


# ---------------------------------------------------------------- dense

class TestDense:
    def test_identity(self, rng):
        x = rng.normal(size=4)
        np.testing.assert_array_equal(nn.dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_hand_arithmetic(self):
        out = nn.dense_forward(np.array([2.0, 3]), np.array([[1.0, 1]]), np.array([1.0]))
        np.testing.assert_array_equal(out, [6])

    def test_matches_naive_oracle_exactly(self, rng):
        x = rng.integers(-9, 10, 3).astype(float)
        w = rng.integers(-9, 10, (4, 3)).astype(float)
        b = rng.integers(-9, 10, 4).astype(float)
        np.testing.assert_array_equal(nn.dense_forward(x, w, b), naive_dense(x, w, b))

    def test_matches_naive_oracle_float(self, rng):
        x, w, b = rng.normal(size=3), rng.normal(size=(4, 3)), rng.normal(size=4)
        np.testing.assert_allclose(nn.dense_forward(x, w, b), naive_dense(x, w, b), atol=1e-14)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            nn.dense_forward(np.zeros(3), np.zeros((4, 2)), np.zeros(4))

    def test_backward_zero(self, rng):
        g = nn.dense_backward(rng.normal(size=3), rng.normal(size=(4, 3)), np.zeros(4))
        assert not (g["weights"].any() or g["bias"].any() or g.input.any())

    def test_backward_scalar(self):
        g = nn.dense_backward(np.array([3.0]), np.array([[2.0]]), np.array([1.0]))
        assert g["weights"][0, 0] == 3.0 and g.input[0] == 2.0 and g["bias"][0] == 1.0

    def test_backward_finite_differences(self, rng):
        x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)
        up = rng.normal(size=(5, 4))

        def loss():
            return float((nn.dense_forward(x, w, b) * up).sum())

        g = nn.dense_backward(x, w, up)
        assert max_rel_error(g["weights"], numerical_grad(loss, w)) < TOL
        assert max_rel_error(g["bias"], numerical_grad(loss, b)) < TOL
        assert max_rel_error(g.input, numerical_grad(loss, x)) < TOL


# ---------------------------------------------------------------- activations

class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(nn.relu(np.array([-1.0, 0, 2])), [0, 0, 2])

    def test_relu_backward_finite_differences(self, rng):
        x = away_from_zero(rng, (3, 7))
        up = rng.normal(size=x.shape)
        num = numerical_grad(lambda: float((nn.relu(x) * up).sum()), x)
        assert max_rel_error(nn.relu_backward(x, up), num) < TOL

    def test_tanh(self, rng):
        x = rng.normal(size=10)
        np.testing.assert_array_equal(nn.tanh_act(x), np.tanh(x))

    def test_softmax_uniform(self):
        np.testing.assert_allclose(nn.softmax(np.zeros(3)), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_softmax_large_logit(self):
        out = nn.softmax(np.array([1000.0, 0, 0]))
        assert np.all(np.isfinite(out))
        # closed form after shifting by the max logit
        ref = [1 / (1 + 2 * math.exp(-1000.0)), math.exp(-1000.0), math.exp(-1000.0)]
        np.testing.assert_allclose(out, ref, rtol=1e-15, atol=1e-300)

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           st.floats(-1e3, 1e3))
    def test_softmax_properties(self, x, c):
        p = nn.softmax(x)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-6
        np.testing.assert_allclose(nn.softmax(x + c), p, rtol=0, atol=1e-9)


# ---------------------------------------------------------------- attention

class TestAttention:
    def test_identical_states(self, rng):
        h = rng.normal(size=5)
        states = np.tile(h, (4, 1))
        ctx, alpha = nn.additive_attention(states, rng.normal(size=(3, 5)), rng.normal(size=3),
                                           rng.normal(size=3))
        np.testing.assert_allclose(ctx, h, atol=1e-14)
        np.testing.assert_allclose(alpha, 0.25, atol=1e-15)

    def test_zero_scores(self, rng):
        states = rng.normal(size=(4, 5))
        ctx, alpha = nn.additive_attention(states, np.zeros((3, 5)), np.zeros(3), rng.normal(size=3))
        np.testing.assert_allclose(alpha, 0.25, atol=1e-15)
        np.testing.assert_allclose(ctx, states.mean(axis=0), atol=1e-14)

    def test_scalar_hand_oracle(self):
        h1, h2, w, b, v = 0.7, -1.3, 0.9, 0.2, 1.5
        s1, s2 = v * math.tanh(w * h1 + b), v * math.tanh(w * h2 + b)
        a1 = math.exp(s1) / (math.exp(s1) + math.exp(s2))
        ctx, alpha = nn.additive_attention(np.array([[h1], [h2]]), np.array([[w]]),
                                           np.array([b]), np.array([v]))
        assert abs(alpha[0] - a1) < 1e-12 and abs(alpha[1] - (1 - a1)) < 1e-12
        assert abs(ctx[0] - (a1 * h1 + (1 - a1) * h2)) < 1e-12

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5), st.integers(1, 4))
    def test_weights_are_a_distribution(self, seed, m, d, u):
        r = np.random.default_rng(seed)
        states = r.normal(size=(m, d))
        ctx, alpha = nn.additive_attention(states, r.normal(size=(u, d)), r.normal(size=u),
                                           r.normal(size=u))
        assert np.all(alpha >= 0) and abs(alpha.sum() - 1) < 1e-6
        assert np.all(ctx >= states.min(axis=0) - 1e-12)
        assert np.all(ctx <= states.max(axis=0) + 1e-12)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            nn.additive_attention(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(4), np.zeros(4))
        with pytest.raises(ShapeError):
            nn.additive_attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros(3), np.zeros(4))
        with pytest.raises(ShapeError):
            nn.additive_attention(np.zeros((0, 3)), np.zeros((4, 3)), np.zeros(4), np.zeros(4))

    def test_backward_zero(self, rng):
        g = nn.additive_attention_backward(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)),
                                           rng.normal(size=2), rng.normal(size=2), np.zeros(2))
        for arr in (g["W"], g["b"], g["v"], g.input):
            assert not np.any(arr)

    def _check(self, states, W, b, v, up):
        def loss():
            return float(nn.additive_attention(states, W, b, v)[0] @ up)

        g = nn.additive_attention_backward(states, W, b, v, up)
        for name, arr in (("W", W), ("b", b), ("v", v)):
            assert max_rel_error(g[name], numerical_grad(loss, arr)) < TOL, name
        assert max_rel_error(g.input, numerical_grad(loss, states)) < TOL
        return g

    def test_backward_finite_differences(self, rng):
        self._check(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=2),
                    rng.normal(size=2), rng.normal(size=2))

    def test_backward_identical_states(self, rng):
        h = rng.normal(size=3)
        g = self._check(np.tile(h, (2, 1)), rng.normal(size=(2, 3)), rng.normal(size=2),
                        rng.normal(size=2), rng.normal(size=3))
        # equal scores make alpha insensitive to v
        np.testing.assert_allclose(g["v"], 0.0, atol=1e-14)
        g0 = self._check(np.zeros((2, 3)), rng.normal(size=(2, 3)), rng.normal(size=2),
                         rng.normal(size=2), rng.normal(size=3))
        np.testing.assert_allclose(g0["v"], 0.0, atol=1e-14)

    def test_grouped_heads_match_single(self, rng):
        states = rng.normal(size=(5, 4, 6))        # batch, M, d
        W, b, v = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        ctx, alpha = nn.additive_attention(states[:, None], W, b, v)
        for n in range(5):
            for h in range(2):
                c, a = nn.additive_attention(states[n], W[h], b[h], v[h])
                np.testing.assert_allclose(ctx[n, h], c, atol=1e-14)
                np.testing.assert_allclose(alpha[n, h], a, atol=1e-14)


# ---------------------------------------------------------------- dropout

class TestDropout:
    def test_eval_identity(self, rng):
        x = rng.normal(size=100)
        out, mask = nn.dropout(x, 0.5, False, rng)
        assert out is x and mask is None

    def test_rate_zero(self, rng):
        x = rng.normal(size=100)
        for training in (True, False):
            np.testing.assert_array_equal(nn.dropout(x, 0.0, training, rng)[0], x)

    def test_monte_carlo_mean(self):
        out, _ = nn.dropout(np.ones(100_000), 0.5, True, nn.make_rng(0))
        assert abs(out.mean() - 1.0) < 0.02
        assert set(np.unique(out)) == {0.0, 2.0}

    def test_rate_one_rejected(self, rng):
        with pytest.raises(ValueError):
            nn.dropout(np.ones(3), 1.0, True, rng)

    def test_seeded_masks_identical(self):
        a = nn.dropout(np.ones(1000), 0.5, True, nn.make_rng(42))[1]
        b = nn.dropout(np.ones(1000), 0.5, True, nn.make_rng(42))[1]
        np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------- loss

class TestCrossEntropy:
    @pytest.mark.parametrize("label", [0, 1, 2])
    def test_uniform(self, label):
        loss, _ = nn.softmax_cross_entropy(np.zeros(3), label)
        assert abs(loss - math.log(3)) < 1e-15

    def test_confident(self):
        loss, _ = nn.softmax_cross_entropy(np.array([10.0, -10, -10]), 0)
        assert 0 <= loss < 1e-8

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            nn.softmax_cross_entropy(np.zeros(3), 3)

    def test_gradient_finite_differences(self, rng):
        logits = rng.normal(size=(4, 3)) * 3
        labels = np.array([0, 2, 1, 2])
        _, grad = nn.softmax_cross_entropy(logits, labels)
        num = numerical_grad(lambda: float(nn.softmax_cross_entropy(logits, labels)[0].sum()),
                             logits)
        assert max_rel_error(grad, num) < TOL


# ---------------------------------------------------------------- adam

class TestAdam:
    def test_zero_gradient(self, rng):
        p = {"w": rng.normal(size=5)}
        before = p["w"].copy()
        nn.adam_step(p, {"w": np.zeros(5)}, nn.AdamState.zeros_like(p))
        np.testing.assert_array_equal(p["w"], before)

    @given(arrays(np.float64, 6, elements=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3)))
    def test_first_step_magnitude_is_lr(self, g):
        p = {"w": np.zeros(6)}
        nn.adam_step(p, {"w": g}, nn.AdamState.zeros_like(p), lr=1e-3)
        # step 1 reduces to lr * g / (|g| + eps)
        np.testing.assert_allclose(np.abs(p["w"]), 1e-3 * np.abs(g) / (np.abs(g) + 1e-8),
                                   rtol=1e-12)
        np.testing.assert_allclose(np.abs(p["w"]), 1e-3, rtol=1e-5)

    def test_two_steps_hand_trace(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        theta, g = 0.5, 0.3
        m = v = 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        p = {"w": np.array([0.5])}
        state = nn.AdamState.zeros_like(p)
        for _ in range(2):
            nn.adam_step(p, {"w": np.array([g])}, state, lr, b1, b2, eps)
        assert state.t == 2
        assert abs(p["w"][0] - theta) < 1e-12

    def test_shape_mismatch(self):
        p = {"w": np.zeros(3)}
        with pytest.raises(ShapeError):
            nn.adam_step(p, {"w": np.zeros(4)}, nn.AdamState.zeros_like(p))


def test_glorot_bounds_and_determinism():
    a = nn.glorot_uniform((50, 40), 40, 50, nn.make_rng(3))
    b = nn.glorot_uniform((50, 40), 40, 50, nn.make_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.abs(a).max() <= math.sqrt(6 / 90)
