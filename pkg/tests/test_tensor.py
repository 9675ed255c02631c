"""The autodiff engine: op semantics against plain-numpy oracles, gradients
against central differences, and tape mechanics."""

import numpy as np
import pytest

from dctnet import tensor as T
from dctnet.tensor import Parameter, Tensor, backward, no_grad

from util import fd_gradcheck


def t(arr, req=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=req)


class TestTensorBasics:
    def test_rank_enforced(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((3, 3)))

    def test_integer_input_promoted_to_float64(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.int32))
        assert x.dtype == np.float64

    def test_float32_preserved(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        assert x.dtype == np.float32

    def test_item_requires_single_element(self):
        with pytest.raises(ValueError):
            t(np.zeros((1, 1, 2, 2))).item()
        assert t(np.full((1, 1, 1, 1), 7.0)).item() == 7.0

    def test_parameter_marks_gradients_and_constraint(self):
        p = Parameter(np.ones((1, 1, 2, 2)), nonneg=True)
        assert p.requires_grad and p.nonneg


class TestElementwise:
    def test_add_sub_mul_values(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 2, 3, 3))
        assert np.array_equal(T.add(t(a), t(b)).data, a + b)
        assert np.array_equal(T.sub(t(a), t(b)).data, a - b)
        assert np.array_equal(T.mul(t(a), t(b)).data, a * b)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            T.add(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 2, 3))))

    def test_relu_values(self):
        x = t([[[[-1.0, 2.0], [0.0, -3.0]]]])
        assert np.array_equal(T.relu(x).data, [[[[0.0, 2.0], [0.0, 0.0]]]])

    def test_elementwise_grads(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
        fd_gradcheck(lambda: T.tensor_sum(T.mul(T.add(a, b), T.sub(a, b))), [a, b])

    def test_relu_grad_away_from_kink(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 2, 3, 3))
        x[np.abs(x) < 1e-2] = 0.5
        xt = Tensor(x, requires_grad=True)
        fd_gradcheck(lambda: T.tensor_sum(T.mul(T.relu(xt), T.relu(xt))), [xt])

    def test_scale_broadcast_semantics(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4, 4))
        v = rng.standard_normal((1, 1, 4, 4))
        assert np.allclose(T.scale_broadcast(t(x), t(v)).data, x * v)

    def test_scale_broadcast_grads(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        v = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
        fd_gradcheck(lambda: T.tensor_sum(T.mul(T.scale_broadcast(x, v), T.scale_broadcast(x, v))), [x, v])


def naive_conv2d(x, w, stride):
    """Direct-loop convolution oracle: SAME zero padding, cross-correlation."""
    b, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    pad = kh // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, co, ho, wo))
    for bb in range(b):
        for oo in range(co):
            for yy in range(ho):
                for xx in range(wo):
                    patch = xp[bb, :, yy * stride : yy * stride + kh, xx * stride : xx * stride + kw]
                    out[bb, oo, yy, xx] = (patch * w[oo]).sum()
    return out


class TestConvolutions:
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("ksize", [1, 3])
    def test_conv2d_matches_direct_loops(self, stride, ksize):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 7, 7))
        w = rng.standard_normal((4, 3, ksize, ksize))
        got = T.conv2d(t(x), t(w), stride=stride).data
        assert np.allclose(got, naive_conv2d(x, w, stride), atol=1e-12)

    def test_conv2d_rejects_even_kernel(self):
        with pytest.raises(ValueError):
            T.conv2d(t(np.zeros((1, 1, 4, 4))), t(np.zeros((1, 1, 2, 2))))

    def test_conv2d_rejects_channel_mismatch(self):
        with pytest.raises(ValueError):
            T.conv2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((1, 3, 3, 3))))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv2d_grads(self, stride):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
        w = Parameter(rng.standard_normal((3, 2, 3, 3)) * 0.3)
        fd_gradcheck(
            lambda: T.tensor_sum(T.mul(T.conv2d(x, w, stride=stride), T.conv2d(x, w, stride=stride))),
            [x, w],
            max_entries=40,
        )

    def test_conv1x1_matches_matmul(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((1, 1, 5, 3))
        bias = rng.standard_normal((1, 5, 1, 1))
        got = T.conv1x1(t(x), t(w), t(bias)).data
        want = np.einsum("oc,bchw->bohw", w[0, 0], x) + bias
        assert np.allclose(got, want, atol=1e-12)

    def test_conv1x1_grads(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
        w = Parameter(rng.standard_normal((1, 1, 4, 3)))
        bias = Parameter(rng.standard_normal((1, 4, 1, 1)))
        fd_gradcheck(
            lambda: T.tensor_sum(T.mul(T.conv1x1(x, w, bias), T.conv1x1(x, w, bias))),
            [x, w, bias],
            max_entries=40,
        )


class TestBatchNorm:
    def _layer(self, c):
        gamma = Parameter(np.ones((1, c, 1, 1)))
        beta = Parameter(np.zeros((1, c, 1, 1)))
        rm = np.zeros(c)
        rv = np.ones(c)
        return gamma, beta, rm, rv

    def test_training_normalizes_with_biased_variance(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((8, 3, 5, 5)) * 3.0 + 1.0
        gamma, beta, rm, rv = self._layer(3)
        out = T.batch_norm(t(x), gamma, beta, rm, rv, training=True).data
        assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_stats_update(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((4, 2, 3, 3)) + 5.0
        gamma, beta, rm, rv = self._layer(2)
        T.batch_norm(t(x), gamma, beta, rm, rv, training=True)
        want_mean = 0.1 * x.mean(axis=(0, 2, 3))
        want_var = 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3))
        assert np.allclose(rm, want_mean, atol=1e-12)
        assert np.allclose(rv, want_var, atol=1e-12)

    def test_eval_uses_running_stats(self):
        x = np.full((2, 1, 2, 2), 3.0)
        gamma, beta, rm, rv = self._layer(1)
        rm[:] = 1.0
        rv[:] = 4.0
        out = T.batch_norm(t(x), gamma, beta, rm, rv, training=False).data
        assert np.allclose(out, (3.0 - 1.0) / np.sqrt(4.0 + 1e-5))

    @pytest.mark.parametrize("training", [True, False])
    def test_grads(self, training):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((3, 2, 4, 4)), requires_grad=True)
        gamma = Parameter(rng.uniform(0.5, 1.5, (1, 2, 1, 1)))
        beta = Parameter(rng.standard_normal((1, 2, 1, 1)))
        rm, rv = np.full(2, 0.3), np.full(2, 1.7)

        def fn():
            out = T.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training=training)
            return T.tensor_sum(T.mul(out, out))

        fd_gradcheck(fn, [x, gamma, beta], eps=1e-5, max_entries=40)


class TestPoolingAndHead:
    def test_max_pool_values(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = T.max_pool2(t(x)).data
        assert np.array_equal(out, [[[[5.0, 7.0], [13.0, 15.0]]]])

    def test_max_pool_tie_routes_to_first(self):
        x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        out = T.max_pool2(x)
        backward(T.tensor_sum(out))
        assert x.grad.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_max_pool_grads(self):
        rng = np.random.default_rng(12)
        vals = rng.permutation(2 * 2 * 4 * 4).astype(np.float64).reshape(2, 2, 4, 4)
        x = Tensor(vals, requires_grad=True)
        fd_gradcheck(lambda: T.tensor_sum(T.mul(T.max_pool2(x), T.max_pool2(x))), [x])

    def test_global_avg_pool(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 3, 4, 4))
        out = T.global_avg_pool(t(x)).data
        assert np.allclose(out[:, :, 0, 0], x.mean(axis=(2, 3)))

    def test_linear_values_and_grads(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.standard_normal((3, 4, 1, 1)), requires_grad=True)
        w = Parameter(rng.standard_normal((1, 1, 5, 4)))
        bias = Parameter(rng.standard_normal((1, 5, 1, 1)))
        out = T.linear(x, w, bias).data
        want = x.data[:, :, 0, 0] @ w.data[0, 0].T + bias.data[0, :, 0, 0]
        assert np.allclose(out[:, :, 0, 0], want)
        fd_gradcheck(lambda: T.tensor_sum(T.mul(T.linear(x, w, bias), T.linear(x, w, bias))), [x, w, bias])

    def test_softmax_cross_entropy_closed_form(self):
        logits = t([[[[np.log(1.0)]], [[np.log(3.0)]]], [[[np.log(2.0)]], [[np.log(2.0)]]]])
        labels = np.array([1, 0])
        loss = T.softmax_cross_entropy(logits, labels).item()
        want = (-np.log(3.0 / 4.0) - np.log(0.5)) / 2.0
        assert abs(loss - want) < 1e-12

    def test_softmax_cross_entropy_grads(self):
        rng = np.random.default_rng(15)
        logits = Tensor(rng.standard_normal((4, 6, 1, 1)), requires_grad=True)
        labels = rng.integers(0, 6, 4)
        fd_gradcheck(lambda: T.softmax_cross_entropy(logits, labels), [logits])

    def test_softmax_stable_for_large_logits(self):
        logits = t(np.full((1, 3, 1, 1), 1e4))
        assert np.isfinite(T.softmax_cross_entropy(logits, np.array([0])).item())


class TestTapeMechanics:
    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with no_grad():
            y = T.relu(x)
        assert y.node is None
        with pytest.raises(ValueError):
            backward(T.tensor_sum(y))

    def test_grad_accumulates_across_passes(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        backward(T.tensor_sum(x))
        backward(T.tensor_sum(x))
        assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 2.0))

    def test_diamond_reuse_counts_both_paths(self):
        x = Tensor(np.full((1, 1, 1, 1), 3.0), requires_grad=True)
        y = T.mul(x, x)
        backward(T.tensor_sum(y))
        assert np.allclose(x.grad, 6.0)

    def test_tape_released_after_backward(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = T.tensor_sum(x)
        backward(y)
        assert y.node is None

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            backward(T.relu(x))

    def test_each_op_visited_once(self):
        calls = []
        x = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
        y = T.apply_op(x.data * 2.0, (x,), lambda g: (calls.append(1) or 2.0 * g,))
        z = T.add(y, y)
        backward(T.tensor_sum(z))
        assert len(calls) == 1
        assert np.allclose(x.grad, 4.0)
