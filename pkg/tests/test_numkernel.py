import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdcss import numkernel as nk
from tdcss.errors import (LabelRangeError, NumericError, ShapeError,
                          UsageError)


def naive_matmul(a, b):
    """Triple-loop reference, independent of the library path."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


class TestDenseForward:
    def test_identity_case(self):
        layer = nk.DenseLayer(np.eye(2, dtype=np.float32),
                              np.zeros(2, np.float32), "identity")
        y, _ = layer.forward(np.array([[1.0, 2.0]], np.float32))
        assert np.array_equal(y, [[1.0, 2.0]])

    def test_relu_clamps_negatives(self):
        layer = nk.DenseLayer(np.array([[1.0]], np.float32),
                              np.zeros(1, np.float32), "relu")
        y, _ = layer.forward(np.array([[-1.0]], np.float32))
        assert np.array_equal(y, [[0.0]])

    def test_matches_naive_matmul_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 4)).astype(np.float32)
        layer = nk.DenseLayer.create(rng, 4, 5, "identity")
        y, _ = layer.forward(x)
        expected = naive_matmul(x, layer.weight) + layer.bias
        assert np.allclose(y, expected, atol=1e-6)

    def test_dimension_mismatch_names_both_shapes(self):
        layer = nk.DenseLayer.create(np.random.default_rng(0), 4, 5)
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            layer.forward(np.zeros((2, 3), np.float32))

    def test_leaky_relu_slope(self):
        layer = nk.DenseLayer(np.array([[1.0]], np.float32),
                              np.zeros(1, np.float32), "leaky_relu")
        y, _ = layer.forward(np.array([[-10.0]], np.float32))
        assert np.allclose(y, [[-2.0]])  # slope 0.2


class TestDenseBackward:
    def test_identity_passthrough(self):
        layer = nk.DenseLayer(np.eye(3, dtype=np.float32),
                              np.zeros(3, np.float32), "identity")
        x = np.ones((2, 3), np.float32)
        _, cache = layer.forward(x)
        g = np.arange(6, dtype=np.float32).reshape(2, 3)
        grad_in, _ = layer.backward(g, cache)
        assert np.array_equal(grad_in, g)

    def test_dead_relu_blocks_gradient(self):
        layer = nk.DenseLayer(np.array([[1.0]], np.float32),
                              np.array([-5.0], np.float32), "relu")
        x = np.zeros((4, 1), np.float32)
        _, cache = layer.forward(x)
        grad_in, _ = layer.backward(np.ones((4, 1), np.float32), cache)
        assert np.array_equal(grad_in, np.zeros((4, 1)))

    def test_missing_cache_is_usage_error(self):
        layer = nk.DenseLayer.create(np.random.default_rng(0), 2, 2)
        with pytest.raises(UsageError):
            layer.backward(np.zeros((1, 2), np.float32), None)

    def test_two_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        net = nk.Net.create(rng, [5, 7, 4], ["relu", "identity"],
                            dtype=np.float64)
        x = rng.normal(size=(6, 5))
        target = rng.normal(size=(6, 4))

        def fn():
            y, caches = net.forward(x)
            diff = y - target
            loss = float(np.sum(diff * diff))
            _, grads = net.backward(2.0 * diff, caches)
            return loss, grads

        assert nk.grad_check(fn, net.params()) <= 1e-4


class TestSoftmaxCE:
    def test_uniform_logits_gives_log_c(self):
        loss, _ = nk.softmax_ce(np.zeros((3, 4), np.float32),
                                np.array([0, 1, 3]))
        assert loss == pytest.approx(np.log(4.0), abs=1e-6)

    def test_saturated_correct_label_is_near_zero(self):
        logits = np.zeros((1, 4), np.float32)
        logits[0, 2] = 50.0
        loss, _ = nk.softmax_ce(logits, np.array([2]))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(5, 6))
        labels = rng.integers(0, 6, size=5)
        params = [logits]

        def fn():
            loss, grad = nk.softmax_ce(logits, labels)
            return loss, [grad]

        assert nk.grad_check(fn, params) <= 1e-4

    def test_soft_target_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(4, 5))
        soft = rng.dirichlet(np.ones(5), size=4)

        def fn():
            loss, grad = nk.softmax_ce(logits, soft)
            return loss, [grad]

        assert nk.grad_check(fn, [logits]) <= 1e-4

    def test_label_out_of_range(self):
        with pytest.raises(LabelRangeError, match="4"):
            nk.softmax_ce(np.zeros((2, 4), np.float32), np.array([0, 4]))

    def test_unnormalized_soft_rows_rejected(self):
        bad = np.full((2, 3), 0.5, np.float32)
        with pytest.raises(UsageError, match="sum to 1"):
            nk.softmax_ce(np.zeros((2, 3), np.float32), bad)

    @settings(max_examples=30, deadline=None)
    @given(shift=st.floats(-30, 30),
           seed=st.integers(0, 2**16))
    def test_shift_invariance(self, shift, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(3, 5)).astype(np.float64)
        labels = rng.integers(0, 5, size=3)
        base, _ = nk.softmax_ce(logits, labels)
        shifted, _ = nk.softmax_ce(logits + shift, labels)
        assert shifted == pytest.approx(base, abs=1e-6)


class TestAdam:
    def test_zero_gradient_is_identity(self):
        rng = np.random.default_rng(0)
        params = [rng.normal(size=(3, 4)).astype(np.float32)]
        before = params[0].copy()
        opt = nk.Adam(params, lr=0.1)
        for _ in range(5):
            opt.step([np.zeros_like(params[0])])
        assert np.array_equal(params[0], before)

    def test_scalar_hand_trace_first_step(self):
        # beta terms cancel at t=1: update = -lr * g / (|g| + eps)
        for g in (0.37, -2.5, 1e-3):
            param = [np.array([[1.0]], np.float64)]
            opt = nk.Adam(param, lr=0.01)
            opt.step([np.array([[g]], np.float64)])
            expected = 1.0 - 0.01 * g / (abs(g) + 1e-8)
            assert param[0][0, 0] == pytest.approx(expected, rel=1e-10)

    def test_descends_quadratic_bowl(self):
        w = [np.array([3.0], np.float64)]
        opt = nk.Adam(w, lr=0.1)
        losses = []
        for _ in range(10):
            losses.append(float(w[0][0] ** 2))
            opt.step([2.0 * w[0]])
        losses.append(float(w[0][0] ** 2))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_shape_mismatch(self):
        opt = nk.Adam([np.zeros((2, 2), np.float32)], lr=0.1)
        with pytest.raises(ShapeError):
            opt.step([np.zeros((2, 3), np.float32)])


class TestGradCheck:
    def test_linear_loss_is_exact(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(6,))
        x = rng.normal(size=(6,))

        def fn():
            return float(w @ x), [x]

        assert nk.grad_check(fn, [w]) <= 1e-8

    def test_corrupted_gradient_is_caught(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(4,))
        x = rng.normal(size=(4,))

        def fn():
            return float(w @ x), [1.1 * x]  # deliberately 10% off

        assert nk.grad_check(fn, [w]) > 1e-2

    def test_nonfinite_loss_raises(self):
        w = [np.array([1.0])]

        def fn():
            return float("nan"), [np.array([0.0])]

        with pytest.raises(NumericError):
            nk.grad_check(fn, w)

    def test_large_parameter_sets_subsample(self):
        rng = np.random.default_rng(9)
        w = rng.normal(size=(150, 100))  # 15000 > 10000 coords
        x = rng.normal(size=(100,))

        def fn():
            return float(np.sum(w @ x)), [np.tile(x, (150, 1))]

        assert nk.grad_check(fn, [w], max_coords=500) <= 1e-6


class TestFiniteGuard:
    def test_net_forward_rejects_nan_input(self):
        net = nk.Net.create(np.random.default_rng(0), [3, 3], ["identity"],
                            name="guarded")
        bad = np.full((2, 3), np.nan, np.float32)
        with pytest.raises(NumericError, match="guarded"):
            net.forward(bad)

    def test_softmax_overflow_is_contained(self):
        logits = np.array([[1e4, -1e4, 0.0]], np.float32)
        loss, grad = nk.softmax_ce(logits, np.array([0]))
        assert np.isfinite(loss) and np.all(np.isfinite(grad))
