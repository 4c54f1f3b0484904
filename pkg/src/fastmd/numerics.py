"""Dense float64 kernels shared by every network component.

Arrays are plain ``numpy.ndarray`` objects in row-major float64.  The kernels
are thin, shape-checked wrappers so that callers get a uniform error type
instead of numpy broadcasting surprises.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

# Stand-in for log(0); keeps every array finite so downstream sums never see NaN.
LOG_ZERO = -1.0e30


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul needs at least 1-d operands")
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        # stacked matmul against a 2-d operand skips BLAS; flatten instead
        return np.dot(a.reshape(-1, a.shape[-1]), b).reshape(*a.shape[:-1], b.shape[-1])
    return np.matmul(a, b)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    if bias is not None:
        y = y + bias
    return y


def logsumexp(x: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    x = as_tensor(x)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("log_softmax needs a non-empty last axis")
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * gain + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def swish(x: np.ndarray) -> np.ndarray:
    # x * sigmoid(x), written to avoid exp overflow for large negative x
    return x * (0.5 * (1.0 + np.tanh(0.5 * x)))


def glu(x: np.ndarray, axis: int = -1) -> np.ndarray:
    a, b = np.split(x, 2, axis=axis)
    return a * (0.5 * (1.0 + np.tanh(0.5 * b)))


def conv2d(
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int | tuple[int, int] = 1,
    bias: np.ndarray | None = None,
    padding: int | tuple[int, int] = 0,
) -> np.ndarray:
    """Multi-channel 2-d cross-correlation.

    ``x`` is (C_in, H, W), ``kernels`` is (C_out, C_in, kh, kw); returns
    (C_out, H_out, W_out).
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 4 or kernels.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d shapes incompatible: x{x.shape} k{kernels.shape}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    kh, kw = kernels.shape[2:]
    if kh > x.shape[1] or kw > x.shape[2]:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {x.shape[1]}x{x.shape[2]}")
    # (C_in, H', W', kh, kw) view, then subsample by stride
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.einsum("chwij,ocij->ohw", windows, kernels, optimize=True)
    if bias is not None:
        out = out + as_tensor(bias)[:, None, None]
    return out


def conv1d_depthwise(x: np.ndarray, kernel: np.ndarray, padding: int | None = None) -> np.ndarray:
    """Per-channel 1-d cross-correlation over time.

    ``x`` is (T, C) and ``kernel`` is (k, C).  ``padding=None`` means
    symmetric same-padding, so the output keeps length T for odd k.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    if x.ndim != 2 or kernel.ndim != 2 or kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d_depthwise shapes incompatible: x{x.shape} k{kernel.shape}")
    k = kernel.shape[0]
    pad = (k - 1) // 2 if padding is None else padding
    xp = np.pad(x, ((pad, pad), (0, 0)))
    if k > xp.shape[0]:
        raise ShapeError(f"kernel length {k} larger than padded input {xp.shape[0]}")
    windows = sliding_window_view(xp, k, axis=0)  # (T_out, C, k)
    return np.einsum("tck,kc->tc", windows, kernel)


def sinusoidal_positions(length: int, dim: int, offset: int = 0) -> np.ndarray:
    pos = np.arange(offset, offset + length, dtype=DTYPE)[:, None]
    idx = np.arange(0, dim, 2, dtype=DTYPE)
    inv = np.exp(-np.log(10000.0) * idx / dim)
    enc = np.zeros((length, dim), dtype=DTYPE)
    enc[:, 0::2] = np.sin(pos * inv)
    enc[:, 1::2] = np.cos(pos * inv[: dim // 2])
    return enc
