"""The multi-decoder speech translation model.

Layout: a conv-subsampled ASR encoder (Transformer or Conformer) with a CTC
head and optional intermediate CTC heads, an ASR decoder that is either
autoregressive or a conditional masked LM, a shallow ST encoder over the ASR
decoder states, and an ST decoder that attends to the acoustic encoder output
before attending to the ST encoder output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nnet
from .ctc import ctc_loss
from .numerics import LOG_ZERO, layer_norm, linear, log_softmax, sinusoidal_positions
from .vocab import MASK_ID, SOS_EOS_ID


@dataclass(frozen=True)
class MDModelConfig:
    asr_vocab_size: int
    st_vocab_size: int
    feat_dim: int = 80
    asr_encoder_layers: int = 12
    asr_decoder_layers: int = 6
    st_encoder_layers: int = 2
    st_decoder_layers: int = 6
    d_model: int = 256
    d_ff: int = 2048
    heads: int = 4
    encoder_kind: str = "transformer"
    conv_kernel: int = 15
    interctc_layers: tuple[int, ...] = (6,)
    decoder_kind: str = "autoregressive"
    subsample_channels: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "interctc_layers", tuple(sorted(set(self.interctc_layers))))
        for name in ("asr_encoder_layers", "asr_decoder_layers", "st_encoder_layers", "st_decoder_layers"):
            if getattr(self, name) < 1:
                raise nnet.ConfigError(f"{name} must be >= 1")
        if self.d_model % self.heads:
            raise nnet.ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.encoder_kind not in ("transformer", "conformer"):
            raise nnet.ConfigError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.decoder_kind not in ("autoregressive", "cmlm"):
            raise nnet.ConfigError(f"unknown decoder_kind {self.decoder_kind!r}")
        for layer in self.interctc_layers:
            if not 1 <= layer < self.asr_encoder_layers:
                raise nnet.ConfigError(
                    f"interctc layer {layer} outside [1, {self.asr_encoder_layers})")
        if min(self.asr_vocab_size, self.st_vocab_size) < 5:
            raise nnet.ConfigError("vocabularies need at least 5 entries")

    @property
    def channels(self) -> int:
        return self.subsample_channels or self.d_model

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["interctc_layers"] = list(self.interctc_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MDModelConfig":
        d = dict(d)
        d["interctc_layers"] = tuple(d.get("interctc_layers", ()))
        return cls(**d)


@dataclass(frozen=True)
class LossWeights:
    lambda_asr: float = 0.5
    lambda_ctc: float = 0.3
    lambda_inter: float = 0.3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")


@dataclass
class Counters:
    """Forward-pass counts, incremented inside the model's forward methods."""

    asr_decoder_passes: int = 0
    st_decoder_passes: int = 0
    encoder_passes: int = 0

    def __add__(self, other: "Counters") -> "Counters":
        return Counters(*(a + b for a, b in zip(self.__dict__.values(), other.__dict__.values())))


@dataclass
class EncoderOutputs:
    h_asr: np.ndarray
    taps: dict[int, np.ndarray]
    valid_length: int


@dataclass
class HiddenIntermediates:
    states: np.ndarray
    conditioning_tokens: list[int]
    source: str  # beam | teacher_forced | cmlm

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    l_st: float
    l_asr_trf: float
    l_asr_ctc: float
    l_inter_mean: float
    l_total: float


def combine_ctc(l_ctc: float, l_inter_mean: float, lambda_inter: float, has_inter: bool) -> float:
    """CTC term with optional intermediate-layer regularisation."""
    if not has_inter:
        return l_ctc
    return (1.0 - lambda_inter) * l_ctc + lambda_inter * l_inter_mean


def combine_losses(l_st: float, l_trf: float, l_ctc: float, l_inter_mean: float,
                   weights: LossWeights, has_inter: bool = False) -> LossBreakdown:
    ctc_term = combine_ctc(l_ctc, l_inter_mean, weights.lambda_inter, has_inter)
    total = (1.0 - weights.lambda_asr) * l_st + weights.lambda_asr * (
        (1.0 - weights.lambda_ctc) * l_trf + weights.lambda_ctc * ctc_term)
    return LossBreakdown(l_st, l_trf, l_ctc, l_inter_mean, total)


class ForeignCacheError(ValueError):
    """A decoder cache was handed to a model (or stack) that did not create it."""


class InvalidTokenError(ValueError):
    pass


@dataclass
class DecoderCache:
    """Incremental decoding state for a batch of hypotheses sharing memories.

    Beam reordering is lazy: ``select`` only records which stored row each
    hypothesis continues, and the next step gathers while it appends.
    """

    owner: int
    stack: str
    memories: list[list[tuple[np.ndarray, np.ndarray]]]
    layers: list[tuple[np.ndarray, np.ndarray] | None]
    length: int = 0
    gather: np.ndarray | None = None

    def select(self, index) -> "DecoderCache":
        index = np.asarray(index, dtype=np.int64)
        if self.gather is not None:
            index = self.gather[index]
        return replace(self, gather=index)

    @property
    def batch_size(self) -> int:
        if self.gather is not None:
            return len(self.gather)
        return 1 if self.layers[0] is None else self.layers[0][0].shape[0]


def token_cross_entropy(logp: np.ndarray, targets) -> float:
    targets = np.asarray(targets, dtype=np.int64)
    return float(-np.mean(logp[np.arange(len(targets)), targets]))


class MDModel:
    """Weights plus forward computations; immutable after construction."""

    def __init__(self, config: MDModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        c = config
        self._enc = [nnet.subdict(params, f"asr_enc.layers.{i}") for i in range(c.asr_encoder_layers)]
        self._sub = nnet.subdict(params, "asr_enc.subsample")
        self._asr_dec = [nnet.subdict(params, f"asr_dec.layers.{i}") for i in range(c.asr_decoder_layers)]
        self._asr_dec_prep = [nnet.prepare_decoder_layer(p, nnet.ASR_CROSS) for p in self._asr_dec]
        self._st_enc = [nnet.subdict(params, f"st_enc.layers.{i}") for i in range(c.st_encoder_layers)]
        self._st_dec = [nnet.subdict(params, f"st_dec.layers.{i}") for i in range(c.st_decoder_layers)]
        self._st_dec_prep = [nnet.prepare_decoder_layer(p, nnet.ST_CROSS) for p in self._st_dec]
        self._scale = math.sqrt(c.d_model)
        self._pe = sinusoidal_positions(512, c.d_model)

    # -- construction --------------------------------------------------------

    @classmethod
    def initialize(cls, config: MDModelConfig, seed: int = 0) -> "MDModel":
        rng = np.random.default_rng(seed)
        c = config
        d, p = c.d_model, {}
        nnet.init_conv_subsample(rng, p, "asr_enc.subsample", c.feat_dim, c.channels, d)
        for i in range(c.asr_encoder_layers):
            if c.encoder_kind == "conformer":
                nnet.init_conformer_block(rng, p, f"asr_enc.layers.{i}", d, c.d_ff, c.conv_kernel)
            else:
                nnet.init_transformer_encoder_block(rng, p, f"asr_enc.layers.{i}", d, c.d_ff)
        nnet.init_norm(p, "asr_enc.ln_out", d)
        nnet.init_linear(rng, p, "ctc", d, c.asr_vocab_size)
        for layer in c.interctc_layers:
            nnet.init_linear(rng, p, f"inter_ctc.{layer}", d, c.asr_vocab_size)
        for stack, vocab, cross, n in (
            ("asr_dec", c.asr_vocab_size, nnet.ASR_CROSS, c.asr_decoder_layers),
            ("st_dec", c.st_vocab_size, nnet.ST_CROSS, c.st_decoder_layers),
        ):
            p[f"{stack}.embed"] = rng.normal(0.0, 1.0 / math.sqrt(d), size=(vocab, d))
            for i in range(n):
                nnet.init_decoder_block(rng, p, f"{stack}.layers.{i}", d, c.d_ff, cross)
            nnet.init_norm(p, f"{stack}.ln_out", d)
            nnet.init_linear(rng, p, f"{stack}.out", d, vocab)
        for i in range(c.st_encoder_layers):
            nnet.init_transformer_encoder_block(rng, p, f"st_enc.layers.{i}", d, c.d_ff)
        nnet.init_norm(p, "st_enc.ln_out", d)
        return cls(config, p)

    def _positions(self, length: int, offset: int = 0) -> np.ndarray:
        if offset + length > self._pe.shape[0]:
            return sinusoidal_positions(length, self.config.d_model, offset)
        return self._pe[offset:offset + length]

    def _norm(self, x, name):
        return layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"], nnet.LN_EPS)

    # -- ASR encoder and CTC -------------------------------------------------

    def encode_asr(self, x: np.ndarray, counters: Counters | None = None) -> EncoderOutputs:
        c = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != c.feat_dim:
            raise nnet.ShapeError(f"expected (T, {c.feat_dim}) features, got {x.shape}")
        h = nnet.conv_subsample(x, self._sub)
        h = h + self._positions(h.shape[0])
        taps = {}
        for i, lp in enumerate(self._enc, start=1):
            if c.encoder_kind == "conformer":
                h = nnet.conformer_block(h, lp, c.heads)
            else:
                h = nnet.transformer_encoder_block(h, lp, c.heads)
            if i in c.interctc_layers:
                taps[i] = h
        if counters is not None:
            counters.encoder_passes += 1
        return EncoderOutputs(self._norm(h, "asr_enc.ln_out"), taps, h.shape[0])

    def ctc_posteriors(self, h: np.ndarray) -> np.ndarray:
        return ctc_head(h, self.params["ctc.w"], self.params["ctc.b"])

    def inter_ctc_posteriors(self, layer: int, tap: np.ndarray) -> np.ndarray:
        h = self._norm(tap, "asr_enc.ln_out")
        return ctc_head(h, self.params[f"inter_ctc.{layer}.w"], self.params[f"inter_ctc.{layer}.b"])

    def search_posteriors(self, h: np.ndarray) -> np.ndarray:
        """CTC posteriors restricted to emittable symbols (no sos/eos, no mask)."""
        return ctc_head(h, self.params["ctc.w"], self.params["ctc.b"], suppress=(SOS_EOS_ID, MASK_ID))

    # -- decoder stacks ------------------------------------------------------

    def _embed(self, stack: str, tokens, offset: int = 0) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        table = self.params[f"{stack}.embed"]
        if tokens.size and (tokens.min() < 0 or tokens.max() >= table.shape[0]):
            raise InvalidTokenError(f"token ids must lie in [0, {table.shape[0]}) for {stack}")
        return table[tokens] * self._scale + self._positions(tokens.shape[-1], offset)

    def _stack_full(self, stack: str, tokens, memories, causal: bool) -> np.ndarray:
        layers, cross = (self._asr_dec, nnet.ASR_CROSS) if stack == "asr_dec" else (self._st_dec, nnet.ST_CROSS)
        y = self._embed(stack, tokens)
        mask = nnet.causal_mask(len(tokens)) if causal else None
        for lp in layers:
            y = nnet._decoder_block(y, memories, lp, self.config.heads, mask, cross)
        return self._norm(y, f"{stack}.ln_out")

    def _logits(self, stack: str, states: np.ndarray) -> np.ndarray:
        return linear(states, self.params[f"{stack}.out.w"], self.params[f"{stack}.out.b"])

    def _new_cache(self, stack: str, memories) -> DecoderCache:
        layers, cross = (self._asr_dec, nnet.ASR_CROSS) if stack == "asr_dec" else (self._st_dec, nnet.ST_CROSS)
        for m in memories:
            if m.shape[0] == 0:
                raise nnet.ShapeError("decoder memory is empty")
        split = [[nnet.split_memory(m, nnet.subdict(lp, name), self.config.heads)
                  for name, m in zip(cross, memories)] for lp in layers]
        return DecoderCache(id(self), stack, split, [None] * len(layers), 0)

    def _stack_step(self, stack: str, cache: DecoderCache, tokens):
        if cache.owner != id(self) or cache.stack != stack:
            raise ForeignCacheError(f"cache for {cache.stack!r} was not created by this model's {stack!r}")
        layers = self._asr_dec_prep if stack == "asr_dec" else self._st_dec_prep
        tokens = np.atleast_1d(np.asarray(tokens, dtype=np.int64))
        if len(tokens) != cache.batch_size and not (cache.length == 0 and cache.gather is None):
            raise nnet.ShapeError(f"{len(tokens)} tokens for a cache of {cache.batch_size} hypotheses")
        y = self._embed(stack, tokens[:, None], cache.length)  # (B, 1, d)
        new_layers = []
        for i, layer in enumerate(layers):
            y, kv = nnet.decoder_block_step(y, cache.layers[i], cache.memories[i], layer,
                                            self.config.heads, cache.gather)
            new_layers.append(kv)
        states = self._norm(y[:, 0], f"{stack}.ln_out")
        logp = log_softmax(self._logits(stack, states))
        return states, logp, replace(cache, layers=new_layers, length=cache.length + 1, gather=None)

    # -- ASR decoder ---------------------------------------------------------

    def _require(self, kind: str) -> None:
        if self.config.decoder_kind != kind:
            raise nnet.ConfigError(
                f"operation needs a {kind} ASR decoder, model has {self.config.decoder_kind}")

    def decode_asr_teacher_forced(self, h_asr: np.ndarray, tokens, counters: Counters | None = None,
                                  source: str = "teacher_forced") -> HiddenIntermediates:
        """One causal pass over ``[sos] + tokens``; returns all |tokens|+1 states."""
        self._require("autoregressive")
        tokens = [int(t) for t in tokens]
        if MASK_ID in tokens:
            raise InvalidTokenError("mask id cannot condition the autoregressive decoder")
        states = self._stack_full("asr_dec", [SOS_EOS_ID] + tokens, [h_asr], causal=True)
        if counters is not None:
            counters.asr_decoder_passes += 1
        return HiddenIntermediates(states, tokens, source)

    def asr_logprobs(self, states: np.ndarray) -> np.ndarray:
        return log_softmax(self._logits("asr_dec", states))

    def init_asr_cache(self, h_asr: np.ndarray) -> DecoderCache:
        self._require("autoregressive")
        return self._new_cache("asr_dec", [h_asr])

    def decode_asr_step(self, cache: DecoderCache, next_token, counters: Counters | None = None):
        """Append one position per hypothesis.

        ``next_token`` is the token fed at the new position (sos first), a
        scalar or a (B,) batch.  Returns ``(states, log_probs, cache')`` with
        states (B, d) and log_probs (B, V).
        """
        out = self._stack_step("asr_dec", cache, next_token)
        if counters is not None:
            counters.asr_decoder_passes += 1
        return out

    def cmlm_forward(self, h_asr: np.ndarray, tokens, counters: Counters | None = None):
        """Bidirectional pass; returns (HiddenIntermediates, per-position log-probs).

        An empty token sequence is run as a single mask so that the ST
        encoder always receives at least one state.
        """
        self._require("cmlm")
        tokens = [int(t) for t in tokens]
        inputs = tokens if tokens else [MASK_ID]
        states = self._stack_full("asr_dec", inputs, [h_asr], causal=False)
        if counters is not None:
            counters.asr_decoder_passes += 1
        return HiddenIntermediates(states, tokens, "cmlm"), self.asr_logprobs(states)

    def hidden_intermediates(self, h_asr, tokens, counters: Counters | None = None) -> HiddenIntermediates:
        if self.config.decoder_kind == "cmlm":
            return self.cmlm_forward(h_asr, tokens, counters)[0]
        return self.decode_asr_teacher_forced(h_asr, tokens, counters)

    # -- ST side -------------------------------------------------------------

    def encode_st(self, hi: HiddenIntermediates | np.ndarray) -> np.ndarray:
        s = hi.states if isinstance(hi, HiddenIntermediates) else np.asarray(hi)
        if s.shape[0] == 0:
            raise nnet.ShapeError("ST encoder input is empty")
        h = s + self._positions(s.shape[0])
        for lp in self._st_enc:
            h = nnet.transformer_encoder_block(h, lp, self.config.heads)
        return self._norm(h, "st_enc.ln_out")

    def init_st_cache(self, h_asr: np.ndarray, h_st: np.ndarray) -> DecoderCache:
        return self._new_cache("st_dec", [h_asr, h_st])

    def decode_st_step(self, cache: DecoderCache, next_token, counters: Counters | None = None):
        states, logp, cache = self._stack_step("st_dec", cache, next_token)
        if counters is not None:
            counters.st_decoder_passes += 1
        return logp, cache

    def st_teacher_forced(self, h_asr, h_st, tokens) -> np.ndarray:
        """Log-probs (|tokens|+1, V) of a causal pass over ``[sos] + tokens``."""
        states = self._stack_full("st_dec", [SOS_EOS_ID] + [int(t) for t in tokens], [h_asr, h_st], causal=True)
        return log_softmax(self._logits("st_dec", states))

    # -- losses --------------------------------------------------------------

    def compute_losses(self, x, y_src, y_tgt, loss_weights: LossWeights = LossWeights(),
                       conditioning=None, rng: np.random.Generator | None = None) -> LossBreakdown:
        """Training objective terms for one utterance.

        ``conditioning`` is ``None`` (ground-truth transcript) or an explicit
        token sequence used to build the hidden intermediates fed to the ST
        encoder.  With a masked-LM decoder, the ASR cross-entropy is taken
        over randomly masked positions of ``y_src`` drawn from ``rng``.
        """
        from .sampling import random_mask

        y_src = [int(t) for t in y_src]
        y_tgt = [int(t) for t in y_tgt]
        if not y_src or not y_tgt:
            raise ValueError("y_src and y_tgt must be non-empty")
        enc = self.encode_asr(x)
        h = enc.h_asr
        l_ctc = ctc_loss(self.ctc_posteriors(h), y_src)
        inter = [ctc_loss(self.inter_ctc_posteriors(layer, tap), y_src) for layer, tap in enc.taps.items()]
        l_inter = float(np.mean(inter)) if inter else 0.0

        if self.config.decoder_kind == "cmlm":
            rng = np.random.default_rng(0) if rng is None else rng
            masked = random_mask(y_src, rng)
            _, logp = self.cmlm_forward(h, masked)
            pos = [i for i, t in enumerate(masked) if t == MASK_ID]
            l_trf = float(-np.mean([logp[i, y_src[i]] for i in pos]))
        else:
            hi_gt = self.decode_asr_teacher_forced(h, y_src)
            logp = self.asr_logprobs(hi_gt.states)
            l_trf = token_cross_entropy(logp, y_src + [SOS_EOS_ID])

        cond = y_src if conditioning is None else [int(t) for t in conditioning]
        if self.config.decoder_kind == "cmlm":
            hi = self.cmlm_forward(h, cond)[0]
        elif conditioning is None:
            hi = hi_gt
        else:
            hi = self.decode_asr_teacher_forced(h, cond)
        h_st = self.encode_st(hi)
        l_st = token_cross_entropy(self.st_teacher_forced(h, h_st, y_tgt), y_tgt + [SOS_EOS_ID])
        return combine_losses(l_st, l_trf, l_ctc, l_inter, loss_weights, has_inter=bool(inter))


def ctc_head(h: np.ndarray, weight: np.ndarray, bias: np.ndarray, suppress=()) -> np.ndarray:
    """Row-wise log-softmax of a linear projection onto the CTC vocabulary.

    Columns listed in ``suppress`` get ``LOG_ZERO`` and the remaining mass is
    renormalised.
    """
    logits = linear(h, weight, bias)
    if suppress:
        logits = logits.copy()
        logits[..., list(suppress)] = LOG_ZERO
    return log_softmax(logits)
