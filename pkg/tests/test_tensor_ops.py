"""Forward-value and structural tests for the autodiff op set.

Convolution and pooling are checked against independent brute-force oracles
(plain Python loops); the frozen matrices below were computed by hand.
"""

import numpy as np
import pytest

from mrfnln import tensor as T
from mrfnln.errors import ConfigError, ShapeMismatchError, TapeReleasedError
from mrfnln.tensor import Tensor

from conftest import make_tensor


# -- oracles ------------------------------------------------------------------


def conv2d_loops(x, w, b, stride=1, dilation=1, padding=0):
    """Direct six-loop cross-correlation, the reference for conv2d."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    ke = dilation * (k - 1) + 1
    Ho = (H + 2 * padding - ke) // stride + 1
    Wo = (W + 2 * padding - ke) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    for bi in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (
                                    xp[bi, c, i * stride + ki * dilation,
                                       j * stride + kj * dilation]
                                    * w[o, c, ki, kj]
                                )
                    out[bi, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def maxpool_loops(x, k):
    B, C, H, W = x.shape
    out = np.zeros((B, C, H // k, W // k), dtype=x.dtype)
    for i in range(H // k):
        for j in range(W // k):
            out[:, :, i, j] = x[:, :, i * k : (i + 1) * k, j * k : (j + 1) * k].max(
                axis=(2, 3)
            )
    return out


def adaptive_maxpool_loops(x, oh, ow):
    B, C, H, W = x.shape
    out = np.zeros((B, C, oh, ow), dtype=x.dtype)
    for i in range(oh):
        h0 = (i * H) // oh
        h1 = int(np.ceil((i + 1) * H / oh))
        for j in range(ow):
            w0 = (j * W) // ow
            w1 = int(np.ceil((j + 1) * W / ow))
            out[:, :, i, j] = x[:, :, h0:h1, w0:w1].max(axis=(2, 3))
    return out


# -- hand-frozen forward values ----------------------------------------------


class TestFrozenValues:
    def test_matmul_2x2(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        expect = np.array([[19.0, 22.0], [43.0, 50.0]])
        assert np.allclose(T.matmul(a, b).data, expect)

    def test_softmax_quarter_three_quarters(self):
        x = Tensor([0.0, np.log(3.0)], dtype=np.float64)
        y = T.softmax(x, axis=-1).data
        assert np.allclose(y, [0.25, 0.75], atol=1e-12)

    def test_box_filter_on_ones(self):
        x = Tensor(np.ones((1, 1, 4, 4)), dtype=np.float64)
        w = Tensor(np.ones((1, 1, 3, 3)), dtype=np.float64)
        out = T.conv2d(x, w, padding=1).data[0, 0]
        expect = np.array(
            [
                [4.0, 6.0, 6.0, 4.0],
                [6.0, 9.0, 9.0, 6.0],
                [6.0, 9.0, 9.0, 6.0],
                [4.0, 6.0, 6.0, 4.0],
            ]
        )
        assert np.array_equal(out, expect)

    def test_maxpool_against_window_enumeration(self, rng):
        x = rng.permutation(16.0 * np.arange(1, 17)).reshape(1, 1, 4, 4)
        got = T.maxpool2d(Tensor(x, dtype=np.float64), 2).data
        assert np.array_equal(got, maxpool_loops(x, 2))


class TestConvForward:
    @pytest.mark.parametrize(
        "shape,o,k,stride,dilation,padding",
        [
            ((2, 3, 8, 8), 4, 3, 1, 1, 1),
            ((1, 2, 9, 7), 3, 3, 2, 1, 1),
            ((2, 2, 10, 10), 2, 3, 1, 2, 2),
            ((1, 4, 6, 6), 5, 1, 1, 1, 0),
            ((2, 3, 8, 8), 4, 4, 2, 1, 1),
        ],
    )
    def test_matches_loop_oracle(self, rng, shape, o, k, stride, dilation, padding):
        x = rng.standard_normal(shape)
        w = rng.standard_normal((o, shape[1], k, k))
        b = rng.standard_normal(o)
        got = T.conv2d(
            Tensor(x), Tensor(w), Tensor(b), stride=stride, dilation=dilation,
            padding=padding,
        ).data
        want = conv2d_loops(x, w, b, stride, dilation, padding)
        assert np.allclose(got, want, atol=1e-10)

    def test_transposed_doubles_spatial_dims(self, rng):
        x = make_tensor(rng, (2, 4, 5, 7), requires_grad=False)
        w = make_tensor(rng, (4, 3, 4, 4), requires_grad=False)
        y = T.conv_transpose2d(x, w, stride=2, padding=1)
        assert y.shape == (2, 3, 10, 14)

    def test_transpose_is_adjoint_of_conv(self, rng):
        # <conv(x), y> == <x, conv_T(y)> with the weight shared; five seeds.
        for seed in range(5):
            r = np.random.default_rng(seed)
            x = r.standard_normal((2, 3, 8, 8))
            w = r.standard_normal((5, 3, 4, 4))
            y = r.standard_normal((2, 5, 4, 4))
            fwd = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
            # A conv weight [O,C,k,k] reads as [in,out,k,k] from the transposed
            # direction, so the adjoint shares the array untouched.
            back = T.conv_transpose2d(Tensor(y), Tensor(w), stride=2, padding=1).data
            lhs = float((fwd * y).sum())
            rhs = float((x * back).sum())
            assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))

    def test_channel_mismatch_raises(self, rng):
        x = make_tensor(rng, (1, 3, 8, 8))
        w = make_tensor(rng, (4, 5, 3, 3))
        with pytest.raises(ShapeMismatchError):
            T.conv2d(x, w, padding=1)

    def test_kernel_larger_than_padded_input_raises(self, rng):
        x = make_tensor(rng, (1, 1, 2, 2))
        w = make_tensor(rng, (1, 1, 3, 3))
        with pytest.raises(ConfigError):
            T.conv2d(x, w, dilation=2, padding=0)

    def test_empty_batch_raises(self, rng):
        x = Tensor(np.zeros((0, 3, 8, 8)))
        w = make_tensor(rng, (4, 3, 3, 3))
        with pytest.raises(ShapeMismatchError):
            T.conv2d(x, w, padding=1)


class TestPooling:
    def test_maxpool_requires_divisibility(self, rng):
        with pytest.raises(ShapeMismatchError):
            T.maxpool2d(make_tensor(rng, (1, 1, 5, 4)), 2)

    def test_maxpool_tie_routes_to_first_in_row_major_order(self):
        x = Tensor(np.array([[[[7.0, 7.0], [7.0, 7.0]]]]), requires_grad=True,
                   dtype=np.float64)
        y = T.maxpool2d(x, 2)
        T.tsum(y).backward()
        assert np.array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    @pytest.mark.parametrize("hw,out", [((13, 9), (1, 1)), ((13, 9), (3, 3)),
                                        ((16, 16), (6, 6)), ((17, 23), (8, 8))])
    def test_adaptive_matches_window_enumeration(self, rng, hw, out):
        x = rng.standard_normal((2, 3) + hw)
        got = T.adaptive_maxpool2d(Tensor(x), out[0], out[1]).data
        assert np.array_equal(got, adaptive_maxpool_loops(x, out[0], out[1]))

    def test_adaptive_window_count_covers_input(self, rng):
        # Every input pixel belongs to at least one window: pooling a strictly
        # increasing field keeps the global max in the last cell.
        x = np.arange(11 * 7, dtype=np.float64).reshape(1, 1, 11, 7)
        y = T.adaptive_maxpool2d(Tensor(x), 3, 3).data
        assert y[0, 0, -1, -1] == x.max()


class TestElementwiseAndShape:
    def test_broadcast_add_backward_sums_over_broadcast_axes(self, rng):
        a = make_tensor(rng, (2, 3, 4, 4))
        b = make_tensor(rng, (1, 3, 1, 1))
        out = T.tsum(T.add(a, b))
        out.backward()
        assert b.grad.shape == (1, 3, 1, 1)
        assert np.allclose(b.grad, np.ones((2, 3, 4, 4)).sum(axis=(0, 2, 3),
                                                             keepdims=True)[0][None])

    def test_incompatible_broadcast_raises(self, rng):
        with pytest.raises(ShapeMismatchError):
            T.add(make_tensor(rng, (2, 3)), make_tensor(rng, (2, 4)))

    def test_mixed_dtypes_raise(self, rng):
        a = make_tensor(rng, (2, 2), dtype=np.float32)
        b = make_tensor(rng, (2, 2), dtype=np.float64)
        with pytest.raises(TypeError):
            T.add(a, b)

    def test_softmax_rows_sum_to_one_under_huge_logits(self):
        x = Tensor(np.array([[1000.0, 1000.0, -1000.0], [5.0, -5.0, 0.0]]))
        y = T.softmax(x, axis=-1).data
        assert np.all(np.isfinite(y))
        assert np.allclose(y.sum(axis=-1), 1.0)

    def test_sigmoid_extremes_stay_finite(self):
        y = T.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        assert np.all(np.isfinite(y))
        assert y[0] == 0.0 and y[1] == 0.5 and y[2] == 1.0

    def test_concat_restores_pieces_in_backward(self, rng):
        a = make_tensor(rng, (1, 2, 3, 3))
        b = make_tensor(rng, (1, 5, 3, 3))
        out = T.concat([a, b], axis=1)
        assert out.shape == (1, 7, 3, 3)
        T.tsum(out).backward()
        assert a.grad.shape == a.shape and b.grad.shape == b.shape

    def test_global_avg_pool_value(self):
        x = Tensor(np.arange(8.0).reshape(1, 2, 2, 2))
        y = T.global_avg_pool(x).data
        assert np.allclose(y[0, :, 0, 0], [1.5, 5.5])

    def test_reflect_pad_mirrors_without_repeating_edge(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 1, 4))
        y = T.pad_reflect2d(x, (0, 0, 2, 2)).data[0, 0, 0]
        assert np.array_equal(y, [2.0, 1.0, 0.0, 1.0, 2.0, 3.0, 2.0, 1.0])

    def test_reflect_pad_wider_than_input_raises(self, rng):
        with pytest.raises(ConfigError):
            T.pad_reflect2d(make_tensor(rng, (1, 1, 4, 4)), (4, 0, 0, 0))

    def test_crop_inverts_pad(self, rng):
        x = make_tensor(rng, (1, 3, 6, 5))
        padded = T.pad_reflect2d(x, (1, 2, 3, 0))
        back = T.crop2d(padded, 1, 3, 6, 5)
        assert np.array_equal(back.data, x.data)


class TestTapeSemantics:
    def test_second_backward_raises(self, rng):
        x = make_tensor(rng, (3, 3))
        loss = T.tsum(T.mul(x, x))
        loss.backward()
        with pytest.raises(TapeReleasedError):
            loss.backward()

    def test_nonscalar_backward_raises(self, rng):
        x = make_tensor(rng, (3, 3))
        with pytest.raises(ShapeMismatchError):
            T.mul(x, x).backward()

    def test_gradients_accumulate_when_tensor_used_twice(self, rng):
        x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
        loss = T.tsum(T.add(T.mul(x, x), x))  # x^2 + x -> 2x + 1 = 5
        loss.backward()
        assert np.allclose(x.grad, [5.0])

    def test_intermediates_receive_grads(self, rng):
        x = make_tensor(rng, (2, 2))
        mid = T.relu(x)
        loss = T.tsum(T.mul(mid, mid))
        loss.backward()
        assert mid.grad is not None and mid.grad.shape == (2, 2)

    def test_detach_blocks_gradient_flow(self, rng):
        x = make_tensor(rng, (2, 2))
        loss = T.tsum(T.mul(x.detach(), x))
        loss.backward()
        assert np.allclose(x.grad, x.data)  # only the attached factor

    def test_no_grad_suppresses_graph(self, rng):
        x = make_tensor(rng, (2, 2))
        with T.no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad and y._grad_fn is None

    def test_forward_values_finite_on_finite_inputs(self, rng):
        # A chain mixing every unary op keeps finite outputs for wild inputs.
        x = Tensor(rng.standard_normal((2, 4, 8, 8)) * 100.0)
        w = Tensor(rng.standard_normal((4, 4, 3, 3)))
        y = T.softmax(T.reshape(T.sigmoid(T.relu(T.conv2d(x, w, padding=1))), (2, -1)), -1)
        assert np.all(np.isfinite(y.data))
