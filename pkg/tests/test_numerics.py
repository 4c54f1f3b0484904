import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fastmd.numerics import (
    ShapeError,
    conv1d_depthwise,
    conv2d,
    glu,
    layer_norm,
    linear,
    log_softmax,
    logsumexp,
    matmul,
    sinusoidal_positions,
    softmax,
    swish,
)

finite = st.floats(-50, 50, allow_nan=False)


def naive_conv2d(x, k, stride):
    c_out, c_in, kh, kw = k.shape
    h_out = (x.shape[1] - kh) // stride + 1
    w_out = (x.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                patch = x[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = np.sum(patch * k[o])
    return out


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_matmul_stacked_matches_einsum():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 6))
    np.testing.assert_allclose(matmul(a, b), np.einsum("ijk,kl->ijl", a, b), atol=1e-12)


def test_linear_bias():
    x = np.array([[1.0, 2.0]])
    w = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    np.testing.assert_allclose(linear(x, w, np.array([0.5, 0.5, 0.5])), [[1.5, 2.5, 3.5]])


def test_log_softmax_large_logits_are_stable():
    out = log_softmax(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(out, [-math.log(2)] * 2)


def test_log_softmax_empty_axis():
    with pytest.raises(ShapeError):
        log_softmax(np.zeros((2, 0)))


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_is_a_distribution(x):
    p = softmax(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12
    assert abs(logsumexp(log_softmax(x))) < 1e-12


@given(arrays(np.float64, st.integers(2, 16), elements=finite))
def test_layer_norm_zero_mean_unit_var(x):
    if np.ptp(x) < 1e-3:
        return
    y = layer_norm(x, np.ones_like(x), np.zeros_like(x), eps=1e-12)
    assert abs(y.mean()) < 1e-9
    assert abs(y.var() - 1.0) < 1e-6


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        layer_norm(np.ones(3), np.ones(3), np.zeros(3), eps=0.0)


def test_swish_and_glu_reference_values():
    x = np.array([-800.0, -1.0, 0.0, 2.0])
    np.testing.assert_allclose(swish(x), x / (1 + np.exp(-np.clip(x, -500, None))), atol=1e-15)
    np.testing.assert_allclose(glu(np.array([3.0, 0.0])), [1.5])


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_loops(stride):
    rng = np.random.default_rng(stride)
    x, k = rng.normal(size=(2, 9, 7)), rng.normal(size=(3, 2, 3, 3))
    np.testing.assert_allclose(conv2d(x, k, stride=stride), naive_conv2d(x, k, stride), atol=1e-12)


def test_conv2d_padding_and_bias():
    x = np.ones((1, 2, 2))
    out = conv2d(x, np.ones((1, 1, 3, 3)), padding=1, bias=np.array([10.0]))
    np.testing.assert_allclose(out, np.full((1, 2, 2), 14.0))


def test_conv2d_kernel_too_large():
    with pytest.raises(ShapeError):
        conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))


def test_conv1d_depthwise_same_length_and_values():
    rng = np.random.default_rng(0)
    x, k = rng.normal(size=(10, 3)), rng.normal(size=(5, 3))
    out = conv1d_depthwise(x, k)
    assert out.shape == x.shape
    xp = np.pad(x, ((2, 2), (0, 0)))
    ref = np.stack([np.sum(xp[t:t + 5] * k, axis=0) for t in range(10)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_sinusoidal_positions_offset_is_a_slice():
    full = sinusoidal_positions(20, 8)
    np.testing.assert_allclose(sinusoidal_positions(5, 8, offset=7), full[7:12])
    np.testing.assert_allclose(full[0, 1::2], 1.0)
