"""Inference for the multi-decoder model.

Three ways of producing the ASR hidden intermediates are supported:

``slow``
    label-synchronous beam search with the autoregressive ASR decoder,
    optionally fused with CTC prefix scores and an n-gram LM, followed by one
    teacher-forced pass over the 1-best transcript.
``fast_parallel``
    greedy CTC transcript, then one teacher-forced pass of the AR decoder.
``fast_masked``
    greedy CTC transcript with low-confidence tokens masked, refined by a
    fixed number of masked-LM passes; states come from the last pass.

All three feed the ST encoder, after which the ST decoder runs beam search.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctc import CTCPrefixScorer, ctc_greedy
from .model import Counters, HiddenIntermediates, MDModel
from .nnet import ConfigError
from .numerics import LOG_ZERO
from .vocab import BLANK_ID, MASK_ID, SOS_EOS_ID, UNK_ID

MODES = ("slow", "fast_parallel", "fast_masked")


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "slow"
    b_asr: int = 16
    b_st: int = 4
    k_mask: int = 1
    p_thres: float = 0.9
    ctc_weight: float = 0.0
    lm_weight: float = 0.0
    max_len_ratio: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.b_asr < 1 or self.b_st < 1:
            raise ConfigError("beam sizes must be >= 1")
        if self.k_mask < 1:
            raise ConfigError("k_mask must be >= 1")
        if not 0.0 <= self.p_thres <= 1.0:
            raise ConfigError("p_thres must lie in [0, 1]")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ConfigError("ctc_weight must lie in [0, 1]")
        if self.lm_weight < 0:
            raise ConfigError("lm_weight must be >= 0")

    def max_len(self, n_frames: int) -> int:
        return max(1, int(self.max_len_ratio * n_frames))


@dataclass
class Hypothesis:
    tokens: list[int]
    log_score: float
    finished: bool = False
    attention_score: float = 0.0
    ctc_score: float = 0.0
    lm_score: float = 0.0


@dataclass
class DecodeResult:
    transcript: list[int]
    translation: list[int]
    hidden_intermediates: HiddenIntermediates
    counters: Counters
    timings: dict[str, float] = field(default_factory=dict)
    asr_hypothesis: Hypothesis | None = None


# -- n-gram LM ---------------------------------------------------------------


class EmptyCorpusError(ValueError):
    pass


@dataclass
class NgramLm:
    """Add-one smoothed n-gram model that backs off to shorter contexts.

    A context seen in training uses its own add-one estimate; an unseen
    context defers entirely to the next shorter one.  Every conditional is
    therefore a proper distribution over ``events``.
    """

    order: int
    events: tuple[int, ...]
    counts: dict[tuple[int, ...], Counter]
    vocab_size: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._event_set = frozenset(self.events)

    def initial_state(self) -> tuple[int, ...]:
        return (SOS_EOS_ID,) * (self.order - 1)

    def prob(self, context: tuple[int, ...], token: int) -> float:
        if token not in self._event_set:
            raise ValueError(f"token {token} is not modelled by the LM")
        for n in range(len(context), -1, -1):
            ctx = context[len(context) - n:]
            table = self.counts.get(ctx)
            if table is not None or n == 0:
                table = table or Counter()
                return (table[token] + 1) / (sum(table.values()) + len(self.events))
        raise AssertionError("unreachable")

    def logprobs(self, state: tuple[int, ...]) -> np.ndarray:
        """Log-probabilities over the full vocabulary (LOG_ZERO off-support)."""
        row = self._cache.get(state)
        if row is None:
            row = np.full(self.vocab_size, LOG_ZERO)
            for tok in self.events:
                row[tok] = math.log(self.prob(state, tok))
            self._cache[state] = row
        return row

    def advance(self, state: tuple[int, ...], token: int) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return (state + (int(token),))[-(self.order - 1):]


def fit_ngram(corpus: Sequence[Sequence[int]], order: int, vocab_size: int) -> NgramLm:
    if order < 1:
        raise ValueError("order must be >= 1")
    if not corpus or not any(len(s) for s in corpus):
        raise EmptyCorpusError("cannot fit an LM on an empty corpus")
    events = tuple(sorted({UNK_ID, SOS_EOS_ID} | set(range(4, vocab_size))))
    counts: dict[tuple[int, ...], Counter] = {}
    for sent in corpus:
        seq = [SOS_EOS_ID] * (order - 1) + [int(t) for t in sent] + [SOS_EOS_ID]
        for i in range(order - 1, len(seq)):
            for n in range(order):
                ctx = tuple(seq[i - n:i])
                counts.setdefault(ctx, Counter())[seq[i]] += 1
    return NgramLm(order, events, counts, vocab_size)


def lm_score(lm: NgramLm, state: tuple[int, ...], token: int) -> tuple[float, tuple[int, ...]]:
    return math.log(lm.prob(state, token)), lm.advance(state, token)


def lm_sequence_score(lm: NgramLm, tokens: Sequence[int]) -> float:
    state, total = lm.initial_state(), 0.0
    for tok in list(tokens) + [SOS_EOS_ID]:
        s, state = lm_score(lm, state, tok)
        total += s
    return total


# -- beam search helpers -----------------------------------------------------


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best entries of a flat array, best first, ties by index."""
    flat = scores.ravel()
    k = min(k, flat.size)
    return np.argsort(-flat, kind="stable")[:k]


def asr_token_mask(vocab_size: int) -> np.ndarray:
    """Tokens the autoregressive ASR search may emit (eos included)."""
    allowed = np.ones(vocab_size, dtype=bool)
    allowed[[BLANK_ID, MASK_ID]] = False
    return allowed


def asr_beam_search(model: MDModel, h_asr: np.ndarray, post: np.ndarray, config: DecodeConfig,
                    lm: NgramLm | None = None, counters: Counters | None = None):
    """Beam search over the AR ASR decoder with optional CTC and LM fusion.

    The per-token increment is
    ``(1 - w_ctc) * log p_att + w_ctc * (prefix_ctc(g + c) - prefix_ctc(g)) + w_lm * log p_lm``.
    The search stops when no hypothesis is left running or the length limit
    is reached.  Returns the best hypothesis and the hidden intermediates from
    a teacher-forced pass over its tokens.
    """
    counters = Counters() if counters is None else counters
    V = model.config.asr_vocab_size
    eos = SOS_EOS_ID
    w_ctc, w_lm = config.ctc_weight, config.lm_weight
    use_lm = lm is not None and w_lm > 0
    allowed = asr_token_mask(V)
    max_len = config.max_len(h_asr.shape[0])

    cache = model.init_asr_cache(h_asr)
    scorer = CTCPrefixScorer(post, BLANK_ID) if w_ctc > 0 else None
    ctc_cands = np.array([t for t in range(V) if allowed[t] and t != eos])

    hyps = [Hypothesis([], 0.0)]
    feed = np.array([eos])
    if scorer is not None:
        init = scorer.initial_state()
        ctc_r = init.r[None]
        ctc_psi = np.zeros(1)
    lm_states = [lm.initial_state()] if use_lm else None
    finished: list[Hypothesis] = []

    for step in range(max_len + 1):
        _, att, cache = model.decode_asr_step(cache, feed, counters)
        B = len(hyps)
        inc = (1.0 - w_ctc) * att
        att_part = att
        if scorer is not None:
            last = np.array([h.tokens[-1] if h.tokens else -1 for h in hyps])
            psi_new, r_new = scorer.extend(ctc_r, last, ctc_cands)
            ctc_inc = np.full((B, V), LOG_ZERO)
            ctc_inc[:, ctc_cands] = psi_new - ctc_psi[:, None]
            ctc_inc[:, eos] = scorer.final(ctc_r) - ctc_psi
            inc = inc + w_ctc * ctc_inc
        if use_lm:
            lm_part = np.stack([lm.logprobs(s) for s in lm_states])
            inc = inc + w_lm * lm_part
        inc = np.where(allowed[None, :], inc, LOG_ZERO)
        if step == max_len:
            # length limit: only eos may follow
            keep = np.zeros(V, dtype=bool)
            keep[eos] = True
            inc = np.where(keep[None, :], inc, LOG_ZERO)
        totals = np.array([h.log_score for h in hyps])[:, None] + inc

        best = _top_k(totals, config.b_asr)
        rows, toks = np.divmod(best, V)
        survivors, next_hyps = [], []
        for b, tok in zip(rows.tolist(), toks.tolist()):
            parent = hyps[b]
            hyp = Hypothesis(
                parent.tokens + ([] if tok == eos else [tok]),
                float(totals[b, tok]),
                finished=tok == eos,
                attention_score=parent.attention_score + float(att_part[b, tok]),
                ctc_score=(float(ctc_psi[b] + ctc_inc[b, tok]) if scorer is not None else 0.0),
                lm_score=(parent.lm_score + float(lm_part[b, tok]) if use_lm else 0.0),
            )
            if tok == eos:
                finished.append(hyp)
            else:
                survivors.append((b, tok))
                next_hyps.append(hyp)
        if not next_hyps:
            break
        idx = np.array([b for b, _ in survivors])
        tok_arr = np.array([t for _, t in survivors])
        cache = cache.select(idx)
        if scorer is not None:
            col = np.searchsorted(ctc_cands, tok_arr)
            ctc_r = r_new[idx, col]
            ctc_psi = psi_new[idx, col]
        if use_lm:
            lm_states = [lm.advance(lm_states[b], t) for b, t in survivors]
        hyps = next_hyps
        feed = tok_arr

    pool = finished or hyps
    best_hyp = max(pool, key=lambda h: h.log_score)
    hi = model.decode_asr_teacher_forced(h_asr, best_hyp.tokens, counters, source="beam")
    return best_hyp, hi


def greedy_asr(model: MDModel, h_asr: np.ndarray, max_len: int) -> list[int]:
    """Step-by-step argmax decoding over the AR ASR decoder."""
    allowed = asr_token_mask(model.config.asr_vocab_size)
    cache = model.init_asr_cache(h_asr)
    tokens: list[int] = []
    feed = SOS_EOS_ID
    for step in range(max_len + 1):
        _, logp, cache = model.decode_asr_step(cache, feed)
        row = np.where(allowed, logp[0], LOG_ZERO)
        if step == max_len:
            break
        tok = int(np.argmax(row))
        if tok == SOS_EOS_ID:
            break
        tokens.append(tok)
        feed = tok
    return tokens


# -- Fast-MD -----------------------------------------------------------------


def fastmd_parallel_hi(model: MDModel, h_asr: np.ndarray, post: np.ndarray,
                       counters: Counters | None = None):
    """Greedy CTC transcript plus one teacher-forced decoder pass."""
    tokens = ctc_greedy(post).tokens
    return tokens, model.decode_asr_teacher_forced(h_asr, tokens, counters)


@dataclass
class MaskedTrace:
    initial_tokens: list[int]
    masked_positions: list[int]
    fills_per_iteration: list[int]
    final_tokens: list[int]


def mask_low_confidence(tokens: Sequence[int], confidences: Sequence[float], p_thres: float):
    masked = [i for i, c in enumerate(confidences) if c < p_thres]
    out = list(tokens)
    for i in masked:
        out[i] = MASK_ID
    return out, masked


def fill_schedule(n_masked: int, k_mask: int) -> list[int]:
    """Positions filled per iteration: ceil(remaining / iterations left)."""
    plan, remaining = [], n_masked
    for left in range(k_mask, 0, -1):
        n = math.ceil(remaining / left)
        plan.append(n)
        remaining -= n
    return plan


def fastmd_masked_hi(model: MDModel, h_asr: np.ndarray, post: np.ndarray, k_mask: int,
                     p_thres: float, counters: Counters | None = None):
    """Mask-CTC refinement; returns (tokens, HiddenIntermediates, MaskedTrace).

    Exactly ``k_mask`` masked-LM passes are made.  Each pass fills the most
    confident predictions at still-masked positions; the hidden
    intermediates come from the final pass, whose input may contain masks.
    """
    if model.config.decoder_kind != "cmlm":
        raise ConfigError("fast_masked decoding needs a cmlm ASR decoder")
    collapsed = ctc_greedy(post)
    tokens, masked = mask_low_confidence(collapsed.tokens, collapsed.confidences, p_thres)
    predictable = np.ones(model.config.asr_vocab_size, dtype=bool)
    predictable[[BLANK_ID, MASK_ID, SOS_EOS_ID]] = False
    fills = []
    hi = None
    for left in range(k_mask, 0, -1):
        hi, logp = model.cmlm_forward(h_asr, tokens, counters)
        pending = [i for i, t in enumerate(tokens) if t == MASK_ID]
        n_fill = math.ceil(len(pending) / left)
        if n_fill:
            rows = np.where(predictable[None, :], logp[pending], LOG_ZERO)
            pred = rows.argmax(axis=1)
            conf = rows.max(axis=1)
            order = np.argsort(-conf, kind="stable")[:n_fill]
            for j in order:
                tokens[pending[j]] = int(pred[j])
        fills.append(n_fill)
    transcript = [t for t in tokens if t != MASK_ID]
    trace = MaskedTrace(list(collapsed.tokens), masked, fills, list(tokens))
    return transcript, hi, trace


# -- ST beam search ----------------------------------------------------------


def st_beam_search(model: MDModel, h_asr: np.ndarray, h_st: np.ndarray, b_st: int, max_len: int,
                   counters: Counters | None = None) -> Hypothesis:
    """Beam search over the ST decoder; finished scores are divided by length."""
    counters = Counters() if counters is None else counters
    V = model.config.st_vocab_size
    eos = SOS_EOS_ID
    allowed = asr_token_mask(V)
    cache = model.init_st_cache(h_asr, h_st)
    hyps = [Hypothesis([], 0.0)]
    feed = np.array([eos])
    finished: list[Hypothesis] = []
    for step in range(max_len):
        logp, cache = model.decode_st_step(cache, feed, counters)
        inc = np.where(allowed[None, :], logp, LOG_ZERO)
        totals = np.array([h.log_score for h in hyps])[:, None] + inc
        best = _top_k(totals, b_st)
        rows, toks = np.divmod(best, V)
        keep, next_hyps = [], []
        for b, tok in zip(rows.tolist(), toks.tolist()):
            score = float(totals[b, tok])
            if tok == eos:
                n = len(hyps[b].tokens) + 1
                finished.append(Hypothesis(hyps[b].tokens, score / n, finished=True))
            else:
                keep.append((b, tok))
                next_hyps.append(Hypothesis(hyps[b].tokens + [tok], score))
        if not next_hyps:
            break
        cache = cache.select([b for b, _ in keep])
        feed = np.array([t for _, t in keep])
        hyps = next_hyps
    if finished:
        return max(finished, key=lambda h: h.log_score)
    best = max(hyps, key=lambda h: h.log_score)
    return Hypothesis(best.tokens, best.log_score / max(1, len(best.tokens)), finished=False)


def greedy_st(model: MDModel, h_asr: np.ndarray, h_st: np.ndarray, max_len: int) -> list[int]:
    allowed = asr_token_mask(model.config.st_vocab_size)
    cache = model.init_st_cache(h_asr, h_st)
    tokens, feed = [], SOS_EOS_ID
    for _ in range(max_len):
        logp, cache = model.decode_st_step(cache, feed)
        tok = int(np.argmax(np.where(allowed, logp[0], LOG_ZERO)))
        if tok == SOS_EOS_ID:
            break
        tokens.append(tok)
        feed = tok
    return tokens


# -- full pipeline -----------------------------------------------------------


def check_compatible(model: MDModel, config: DecodeConfig) -> None:
    kind = model.config.decoder_kind
    if config.mode == "fast_masked" and kind != "cmlm":
        raise ConfigError("fast_masked decoding needs a cmlm ASR decoder")
    if config.mode != "fast_masked" and kind != "autoregressive":
        raise ConfigError(f"{config.mode} decoding needs an autoregressive ASR decoder")


def decode(model: MDModel, x: np.ndarray, config: DecodeConfig, lm: NgramLm | None = None) -> DecodeResult:
    """Decode one utterance end to end."""
    check_compatible(model, config)
    counters = Counters()
    t0 = time.perf_counter()
    enc = model.encode_asr(x, counters)
    h_asr = enc.h_asr
    post = model.search_posteriors(h_asr)
    t1 = time.perf_counter()

    asr_hyp = None
    if config.mode == "fast_parallel":
        transcript, hi = fastmd_parallel_hi(model, h_asr, post, counters)
    elif config.mode == "fast_masked":
        transcript, hi, _ = fastmd_masked_hi(model, h_asr, post, config.k_mask, config.p_thres, counters)
    else:
        asr_hyp, hi = asr_beam_search(model, h_asr, post, config, lm, counters)
        transcript = list(asr_hyp.tokens)
    t2 = time.perf_counter()

    h_st = model.encode_st(hi)
    st_hyp = st_beam_search(model, h_asr, h_st, config.b_st, config.max_len(h_asr.shape[0]), counters)
    t3 = time.perf_counter()
    timings = {"encode_s": t1 - t0, "asr_stage_s": t2 - t1, "st_stage_s": t3 - t2, "total_s": t3 - t0}
    return DecodeResult(transcript, list(st_hyp.tokens), hi, counters, timings, asr_hyp)
