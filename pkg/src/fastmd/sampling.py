"""Training-time conditioning: sampled CTC transcripts with CER filtering.

During training the ASR decoder can be conditioned on the greedy CTC output
instead of the reference transcript so that the ST side sees the same kind of
(noisy) hidden intermediates it will get at test time.  Outputs that are too
far from the reference by character error rate fall back to the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctc import ctc_greedy
from .vocab import MASK_ID, Vocabulary


class UndefinedReferenceError(ValueError):
    """Error rates are undefined against an empty reference."""


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance (two-row dynamic programme)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def cer_text(hyp: str, ref: str) -> float:
    if not ref:
        raise UndefinedReferenceError("CER needs a non-empty reference")
    return levenshtein(hyp, ref) / len(ref)


def cer(hyp: Sequence[int], ref: Sequence[int], vocab: Vocabulary) -> float:
    """Character error rate of detokenized ``hyp`` against ``ref`` (spaces count)."""
    return cer_text(vocab.detokenize(hyp), vocab.detokenize(ref))


def random_mask(tokens: Sequence[int], rng: np.random.Generator, mask_id: int = MASK_ID) -> list[int]:
    """Mask m distinct positions, m drawn uniformly from 1..len(tokens)."""
    out = [int(t) for t in tokens]
    if not out:
        return out
    m = int(rng.integers(1, len(out) + 1))
    for i in rng.choice(len(out), size=m, replace=False):
        out[int(i)] = mask_id
    return out


@dataclass
class SamplingConfig:
    theta_cer: float = 0.4
    mask_mode: str = "none"  # none | random
    rng_seed: int = 0

    def __post_init__(self):
        if self.theta_cer < 0 or math.isnan(self.theta_cer):
            raise ValueError("theta_cer must be >= 0")
        if self.mask_mode not in ("none", "random"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")


@dataclass
class SampleOutcome:
    tokens: list[int]
    used_ctc: bool
    cer: float
    ctc_tokens: list[int] = field(default_factory=list)


def select_conditioning(ctc_tokens: Sequence[int], y_src: Sequence[int], vocab: Vocabulary,
                        theta_cer: float) -> SampleOutcome:
    """Keep the CTC output unless its CER is strictly above ``theta_cer``."""
    rate = cer(ctc_tokens, y_src, vocab)
    if rate > theta_cer:
        return SampleOutcome([int(t) for t in y_src], False, rate, list(ctc_tokens))
    return SampleOutcome([int(t) for t in ctc_tokens], True, rate, list(ctc_tokens))


def ctc_sample(model, x: np.ndarray, y_src: Sequence[int], vocab: Vocabulary,
               config: SamplingConfig, rng: np.random.Generator | None = None) -> SampleOutcome:
    """Conditioning tokens for one training utterance.

    Runs the model's CTC head greedily, applies CER thresholding against the
    reference, and optionally masks the chosen sequence at random.
    """
    if not y_src:
        raise ValueError("y_src must be non-empty")
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    h = model.encode_asr(x).h_asr
    ctc_tokens = ctc_greedy(model.search_posteriors(h)).tokens
    outcome = select_conditioning(ctc_tokens, y_src, vocab, config.theta_cer)
    if config.mask_mode == "random":
        outcome.tokens = random_mask(outcome.tokens, rng)
    return outcome
