"""Transformer / Conformer building blocks over float64 numpy arrays.

Parameters live in flat ``dict[str, ndarray]`` objects; every block takes the
sub-dict for itself (see :func:`subdict`).  Linear weights are stored as
(in, out).  Boolean masks use ``True`` for "may attend".

All blocks are pre-norm residual.  Decoder blocks come in two flavours: a
full-sequence form and a ``*_step`` form that appends one position per call
against a per-layer key/value cache; the two agree to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .numerics import (
    LOG_ZERO,
    ShapeError,
    conv1d_depthwise,
    conv2d,
    glu,
    layer_norm,
    linear,
    relu,
    softmax,
    swish,
)

Params = Mapping[str, np.ndarray]

LN_EPS = 1e-12
BN_EPS = 1e-5


class ConfigError(ValueError):
    """Raised for structurally invalid model or decoder configurations."""


class InputTooShortError(ValueError):
    """Raised when a feature sequence cannot survive subsampling."""


def subdict(params: Params, prefix: str) -> dict[str, np.ndarray]:
    prefix = prefix.rstrip(".") + "."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# -- masks -----------------------------------------------------------------


@dataclass(frozen=True)
class AttentionMask:
    """Declarative mask; ``build`` turns it into a boolean (Tq, Tk) array."""

    kind: str = "none"  # none | causal | padding
    valid_lengths: int | None = None

    def build(self, tq: int, tk: int) -> np.ndarray | None:
        if self.kind == "none":
            return None
        if self.kind == "causal":
            return causal_mask(tq, tk)
        if self.kind == "padding":
            return padding_mask(self.valid_lengths, tk)
        raise ConfigError(f"unknown mask kind {self.kind!r}")


def causal_mask(tq: int, tk: int | None = None) -> np.ndarray:
    tk = tq if tk is None else tk
    # query i sits at absolute position tk - tq + i
    offset = tk - tq
    return np.arange(tk)[None, :] <= (np.arange(tq)[:, None] + offset)


def padding_mask(valid_length: int | None, total: int) -> np.ndarray:
    valid = total if valid_length is None else valid_length
    return (np.arange(total) < valid)[None, :]


# -- attention -------------------------------------------------------------


@dataclass
class AttentionProbe:
    """Collects per-head attention weights when passed to an attention call."""

    weights: list[np.ndarray] = field(default_factory=list)

    def __call__(self, w: np.ndarray) -> None:
        self.weights.append(w)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    *lead, t, d = x.shape
    return np.swapaxes(x.reshape(*lead, t, heads, d // heads), -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    x = np.swapaxes(x, -2, -3)
    *lead, t, h, dh = x.shape
    return x.reshape(*lead, t, h * dh)


def scaled_dot_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    heads: int,
    mask: np.ndarray | None = None,
    probe: Callable[[np.ndarray], None] | None = None,
) -> np.ndarray:
    """Multi-head attention on already-projected q/k/v of width d_model."""
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"d_model={d} not divisible by heads={heads}")
    if k.shape[-2] == 0:
        raise ShapeError("attention over an empty memory")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scores = np.matmul(qh, np.swapaxes(kh, -1, -2)) / math.sqrt(d // heads)
    if mask is not None:
        scores = np.where(mask, scores, LOG_ZERO)
    w = softmax(scores)
    if probe is not None:
        probe(w)
    return _merge_heads(np.matmul(w, vh))


def project_kv(memory: np.ndarray, p: Params) -> tuple[np.ndarray, np.ndarray]:
    return linear(memory, p["wk"], p["bk"]), linear(memory, p["wv"], p["bv"])


def attend(query: np.ndarray, k: np.ndarray, v: np.ndarray, p: Params, heads: int,
           mask: np.ndarray | None = None, probe=None) -> np.ndarray:
    q = linear(query, p["wq"], p["bq"])
    return linear(scaled_dot_attention(q, k, v, heads, mask, probe), p["wo"], p["bo"])


def multi_head_attention(query, key, value, p: Params, heads: int,
                         mask: np.ndarray | AttentionMask | None = None, probe=None) -> np.ndarray:
    if isinstance(mask, AttentionMask):
        mask = mask.build(query.shape[-2], key.shape[-2])
    k = linear(key, p["wk"], p["bk"])
    v = linear(value, p["wv"], p["bv"])
    return attend(query, k, v, p, heads, mask, probe)


# -- feed-forward / norms --------------------------------------------------


def feed_forward(x: np.ndarray, p: Params, activation=relu) -> np.ndarray:
    return linear(activation(linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])


def norm(x: np.ndarray, p: Params, name: str) -> np.ndarray:
    return layer_norm(x, p[f"{name}.g"], p[f"{name}.b"], LN_EPS)


# -- encoders --------------------------------------------------------------


def conv_subsample_length(t: int) -> int:
    return ((t - 3) // 2 + 1 - 3) // 2 + 1 if t >= 3 else 0


def conv_subsample(x: np.ndarray, p: Params) -> np.ndarray:
    """Two kernel-3 stride-2 ReLU conv layers then a projection to d_model.

    ``x`` is (T, F); the result is (T', d_model) with T' ~ T/4.
    """
    t, f = x.shape
    if conv_subsample_length(t) < 1 or conv_subsample_length(f) < 1:
        raise InputTooShortError(f"input of {t}x{f} frames too short for 4x subsampling (need >= 7)")
    h = relu(conv2d(x[None], p["conv1.w"], stride=2, bias=p["conv1.b"]))
    h = relu(conv2d(h, p["conv2.w"], stride=2, bias=p["conv2.b"]))
    c, tt, ff = h.shape
    h = np.transpose(h, (1, 0, 2)).reshape(tt, c * ff)
    return linear(h, p["out.w"], p["out.b"])


def transformer_encoder_block(x: np.ndarray, p: Params, heads: int,
                              mask: np.ndarray | None = None, probe=None) -> np.ndarray:
    n = norm(x, p, "ln_attn")
    x = x + multi_head_attention(n, n, n, subdict(p, "attn"), heads, mask, probe)
    return x + feed_forward(norm(x, p, "ln_ff"), subdict(p, "ff"))


def conformer_conv_module(x: np.ndarray, p: Params, valid_length: int | None = None) -> np.ndarray:
    h = glu(linear(x, p["pw1.w"], p["pw1.b"]))
    if valid_length is not None and valid_length < h.shape[0]:
        h = h.copy()
        h[valid_length:] = 0.0
    h = conv1d_depthwise(h, p["dw.w"]) + p["dw.b"]
    # batch norm in inference mode: affine with running statistics
    h = (h - p["bn.mean"]) / np.sqrt(p["bn.var"] + BN_EPS) * p["bn.g"] + p["bn.b"]
    return linear(swish(h), p["pw2.w"], p["pw2.b"])


def conformer_block(x: np.ndarray, p: Params, heads: int, mask: np.ndarray | None = None,
                    valid_length: int | None = None, probe=None) -> np.ndarray:
    x = x + 0.5 * feed_forward(norm(x, p, "ln_ff1"), subdict(p, "ff1"), swish)
    n = norm(x, p, "ln_attn")
    x = x + multi_head_attention(n, n, n, subdict(p, "attn"), heads, mask, probe)
    x = x + conformer_conv_module(norm(x, p, "ln_conv"), subdict(p, "conv"), valid_length)
    x = x + 0.5 * feed_forward(norm(x, p, "ln_ff2"), subdict(p, "ff2"), swish)
    return norm(x, p, "ln_out")


# -- decoders --------------------------------------------------------------

ASR_CROSS = ("src_attn",)
ST_CROSS = ("asr_attn", "st_attn")


def _decoder_block(y: np.ndarray, memories: Sequence[np.ndarray], p: Params, heads: int,
                   self_mask: np.ndarray | None, cross: Sequence[str], probe=None) -> np.ndarray:
    for m in memories:
        if m.shape[0] == 0:
            raise ShapeError("decoder memory is empty")
    n = norm(y, p, "ln_self")
    y = y + multi_head_attention(n, n, n, subdict(p, "self_attn"), heads, self_mask, probe)
    for name, memory in zip(cross, memories):
        n = norm(y, p, f"ln_{name}")
        y = y + multi_head_attention(n, memory, memory, subdict(p, name), heads, None, probe)
    return y + feed_forward(norm(y, p, "ln_ff"), subdict(p, "ff"))


def transformer_decoder_block(y, memory, p: Params, heads: int,
                              self_mask: np.ndarray | None = None, probe=None) -> np.ndarray:
    """Self-attention, cross-attention over ``memory``, feed-forward."""
    return _decoder_block(y, [memory], p, heads, self_mask, ASR_CROSS, probe)


def st_decoder_block(y, h_asr, h_st, p: Params, heads: int,
                     self_mask: np.ndarray | None = None, probe=None) -> np.ndarray:
    """Self-attention, speech attention over ``h_asr``, attention over ``h_st``, feed-forward."""
    return _decoder_block(y, [h_asr, h_st], p, heads, self_mask, ST_CROSS, probe)


@dataclass(frozen=True)
class PreparedDecoderLayer:
    """Decoder block weights regrouped for incremental decoding (fused QKV)."""

    params: dict
    w_qkv: np.ndarray
    b_qkv: np.ndarray
    cross: tuple[str, ...]


def prepare_decoder_layer(p: Params, cross: Sequence[str]) -> PreparedDecoderLayer:
    sa = subdict(p, "self_attn")
    w = np.concatenate([sa["wq"], sa["wk"], sa["wv"]], axis=1)
    b = np.concatenate([sa["bq"], sa["bk"], sa["bv"]])
    return PreparedDecoderLayer(dict(p), w, b, tuple(cross))


def split_memory(memory: np.ndarray, p: Params, heads: int) -> tuple[np.ndarray, np.ndarray]:
    """Project a cross-attention memory once: K^T as (H, dh, T), V as (H, T, dh)."""
    k, v = project_kv(memory, p)
    return np.swapaxes(_split_heads(k, heads), -1, -2), _split_heads(v, heads)


def _attend_split(q: np.ndarray, k_t: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    dh = q.shape[-1] // heads
    scores = np.matmul(_split_heads(q, heads), k_t) / math.sqrt(dh)
    return _merge_heads(np.matmul(softmax(scores), v))


def decoder_block_step(
    y_new: np.ndarray,
    cache: tuple[np.ndarray, np.ndarray] | None,
    memories: Sequence[tuple[np.ndarray, np.ndarray]],
    layer: PreparedDecoderLayer,
    heads: int,
    gather: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Advance one decoder block by one position for a batch of hypotheses.

    ``y_new`` is (B, 1, d).  ``cache`` holds projected self-attention keys and
    values (B0, t, d) for earlier positions; row ``gather[i]`` of the cache
    belongs to hypothesis ``i`` (identity when ``gather`` is None).
    ``memories`` are the pre-split cross-attention memories from
    :func:`split_memory`, one pair per cross-attention layer.
    """
    p = layer.params
    B, _, d = y_new.shape
    n = norm(y_new, p, "ln_self")
    qkv = linear(n, layer.w_qkv, layer.b_qkv)
    q, k_new, v_new = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
    if cache is None:
        k_all, v_all = k_new, v_new
    else:
        t = cache[0].shape[1]
        k_all = np.empty((B, t + 1, d))
        v_all = np.empty((B, t + 1, d))
        if gather is None:
            k_all[:, :t] = cache[0]
            v_all[:, :t] = cache[1]
        else:
            np.take(cache[0], gather, axis=0, out=k_all[:, :t])
            np.take(cache[1], gather, axis=0, out=v_all[:, :t])
        k_all[:, t:] = k_new
        v_all[:, t:] = v_new
    att = scaled_dot_attention(q, k_all, v_all, heads)
    y = y_new + linear(att, p["self_attn.wo"], p["self_attn.bo"])
    for name, (k_t, v_h) in zip(layer.cross, memories):
        nq = linear(norm(y, p, f"ln_{name}"), p[f"{name}.wq"], p[f"{name}.bq"])
        y = y + linear(_attend_split(nq, k_t, v_h, heads), p[f"{name}.wo"], p[f"{name}.bo"])
    h = relu(linear(norm(y, p, "ln_ff"), p["ff.w1"], p["ff.b1"]))
    y = y + linear(h, p["ff.w2"], p["ff.b2"])
    return y, (k_all, v_all)


# -- initialisation --------------------------------------------------------


def _dense(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_linear(rng, out: dict, name: str, n_in: int, n_out: int) -> None:
    out[f"{name}.w"] = _dense(rng, n_in, n_out)
    out[f"{name}.b"] = np.zeros(n_out)


def init_norm(out: dict, name: str, d: int) -> None:
    out[f"{name}.g"] = np.ones(d)
    out[f"{name}.b"] = np.zeros(d)


def init_attention(rng, out: dict, name: str, d: int) -> None:
    for proj in ("q", "k", "v", "o"):
        out[f"{name}.w{proj}"] = _dense(rng, d, d)
        out[f"{name}.b{proj}"] = np.zeros(d)


def init_ff(rng, out: dict, name: str, d: int, d_ff: int) -> None:
    out[f"{name}.w1"] = _dense(rng, d, d_ff)
    out[f"{name}.b1"] = np.zeros(d_ff)
    out[f"{name}.w2"] = _dense(rng, d_ff, d)
    out[f"{name}.b2"] = np.zeros(d)


def init_transformer_encoder_block(rng, out: dict, prefix: str, d: int, d_ff: int) -> None:
    init_norm(out, f"{prefix}.ln_attn", d)
    init_attention(rng, out, f"{prefix}.attn", d)
    init_norm(out, f"{prefix}.ln_ff", d)
    init_ff(rng, out, f"{prefix}.ff", d, d_ff)


def init_conformer_block(rng, out: dict, prefix: str, d: int, d_ff: int, kernel: int) -> None:
    for ff in ("ff1", "ff2"):
        init_norm(out, f"{prefix}.ln_{ff}", d)
        init_ff(rng, out, f"{prefix}.{ff}", d, d_ff)
    init_norm(out, f"{prefix}.ln_attn", d)
    init_attention(rng, out, f"{prefix}.attn", d)
    init_norm(out, f"{prefix}.ln_conv", d)
    init_linear(rng, out, f"{prefix}.conv.pw1", d, 2 * d)
    out[f"{prefix}.conv.dw.w"] = rng.uniform(-1.0, 1.0, size=(kernel, d)) / math.sqrt(kernel)
    out[f"{prefix}.conv.dw.b"] = np.zeros(d)
    out[f"{prefix}.conv.bn.mean"] = np.zeros(d)
    out[f"{prefix}.conv.bn.var"] = np.ones(d)
    out[f"{prefix}.conv.bn.g"] = np.ones(d)
    out[f"{prefix}.conv.bn.b"] = np.zeros(d)
    init_linear(rng, out, f"{prefix}.conv.pw2", d, d)
    init_norm(out, f"{prefix}.ln_out", d)


def init_decoder_block(rng, out: dict, prefix: str, d: int, d_ff: int, cross: Sequence[str]) -> None:
    init_norm(out, f"{prefix}.ln_self", d)
    init_attention(rng, out, f"{prefix}.self_attn", d)
    for name in cross:
        init_norm(out, f"{prefix}.ln_{name}", d)
        init_attention(rng, out, f"{prefix}.{name}", d)
    init_norm(out, f"{prefix}.ln_ff", d)
    init_ff(rng, out, f"{prefix}.ff", d, d_ff)


def init_conv_subsample(rng, out: dict, prefix: str, feat_dim: int, channels: int, d: int) -> None:
    out[f"{prefix}.conv1.w"] = rng.uniform(-1, 1, size=(channels, 1, 3, 3)) / 3.0
    out[f"{prefix}.conv1.b"] = np.zeros(channels)
    lim = 1.0 / math.sqrt(channels * 9)
    out[f"{prefix}.conv2.w"] = rng.uniform(-lim, lim, size=(channels, channels, 3, 3)) * math.sqrt(3)
    out[f"{prefix}.conv2.b"] = np.zeros(channels)
    init_linear(rng, out, f"{prefix}.out", channels * conv_subsample_length(feat_dim), d)
