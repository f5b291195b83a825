import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from vqe.errors import ShapeError
from vqe.tensor import (Tape, Tensor, concat_channels, conv2d, conv2d_transpose, default_dtype, downsample_area,
                        eltwise, mse, record_relu_masks, relu, split_channels, sum_all, upsample_bilinear)


def brute_conv(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out + b.reshape(1, -1, 1, 1)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (2, 3, 7), (1, 0, 1)])
def test_conv2d_matches_direct_loop(f64, stride, pad, k):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 10, 10))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=(1, 4, 1, 1))
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, brute_conv(x, w, b, stride, pad), atol=1e-12)


def test_conv2d_transpose_is_adjoint_of_conv2d(f64):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3, 8, 8))
    w = rng.normal(size=(5, 3, 4, 4))
    y = rng.normal(size=(1, 5, 4, 4))
    forward = conv2d(Tensor(x), Tensor(w), stride=2, pad=1).data
    adjoint = conv2d_transpose(Tensor(y), Tensor(w), stride=2, pad=1).data
    assert adjoint.shape == x.shape
    assert np.isclose(np.sum(forward * y), np.sum(x * adjoint), rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(k=st.sampled_from([3, 4, 7]), stride=st.integers(1, 3), data=st.data())
def test_adjoint_identity_holds_across_kernels_and_shapes(k, stride, data):
    pad = data.draw(st.integers(0, k - 1))
    n, cin, cout = data.draw(st.integers(1, 2)), data.draw(st.integers(1, 3)), data.draw(st.integers(1, 3))
    ho, wo = data.draw(st.integers(1, 5)), data.draw(st.integers(1, 5))
    # input sizes with no leftover rows, so the transpose lands back on the input shape
    h, wd = (ho - 1) * stride + k - 2 * pad, (wo - 1) * stride + k - 2 * pad
    assume(h >= 1 and wd >= 1)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    x = rng.normal(size=(n, cin, h, wd))
    w = rng.normal(size=(cout, cin, k, k))
    y = rng.normal(size=(n, cout, ho, wo))
    with default_dtype(np.float64):
        forward = conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad).data
        adjoint = conv2d_transpose(Tensor(y), Tensor(w), stride=stride, pad=pad).data
    assert forward.shape == y.shape and adjoint.shape == x.shape
    assert np.isclose(np.sum(forward * y), np.sum(x * adjoint), rtol=1e-10, atol=1e-10)


def test_conv2d_transpose_output_size():
    x = Tensor(np.zeros((1, 2, 6, 6)))
    w = Tensor(np.zeros((2, 3, 4, 4)))
    assert conv2d_transpose(x, w, stride=2, pad=1).shape == (1, 3, 12, 12)


def test_tensors_must_be_four_dimensional():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((3, 3)))


def test_channel_mismatch_is_rejected():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), pad=1)


def test_nothing_is_recorded_without_tracked_inputs():
    with Tape() as tape:
        relu(Tensor(np.ones((1, 1, 2, 2))))
    assert len(tape) == 0


def test_backward_accumulates_shared_inputs(f64):
    x = Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(eltwise("add", eltwise("mul", x, x), x))
    grads = tape.backward(loss)
    np.testing.assert_allclose(grads[x], np.full((1, 1, 2, 2), 7.0))


def test_unreached_leaf_gets_zero_gradient(f64):
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    unused = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
    grads = tape.backward(loss, wrt=[x, unused])
    assert np.all(grads[unused] == 0)


def test_tape_is_freed_by_backward():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)


def test_backward_needs_scalar_loss():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        y = relu(x)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_split_inverts_concat():
    rng = np.random.default_rng(2)
    a, b = Tensor(rng.normal(size=(1, 2, 3, 3))), Tensor(rng.normal(size=(1, 3, 3, 3)))
    left, right = split_channels(concat_channels(a, b), [2, 3])
    assert np.array_equal(left.data, a.data) and np.array_equal(right.data, b.data)


@pytest.mark.parametrize("factor", [2, 4])
def test_resampling_preserves_constants(f64, factor):
    x = Tensor(np.full((1, 1, 8, 8), 0.25))
    np.testing.assert_allclose(upsample_bilinear(x, factor).data, 0.25, atol=1e-15)
    np.testing.assert_allclose(downsample_area(x, factor).data, 0.25, atol=1e-15)
    assert upsample_bilinear(x, factor).shape == (1, 1, 8 * factor, 8 * factor)


def test_mse_is_mean_of_squares(f64):
    a = Tensor(np.zeros((1, 1, 2, 2)))
    b = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert mse(a, b).item() == pytest.approx(7.5)


def test_relu_activation_patterns_are_recorded():
    with record_relu_masks() as masks:
        relu(Tensor(np.array([[[[-1.0, 2.0]]]])))
    assert len(masks) == 1
