"""Evaluation metrics and the decoding-speed benchmark."""

from __future__ import annotations

import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decode import DecodeConfig, decode
from .model import Counters
from .sampling import UndefinedReferenceError, cer, cer_text, levenshtein

__all__ = [
    "BenchReport", "BleuStats", "bench", "bleu_stats", "cer", "cer_text", "corpus_bleu",
    "levenshtein", "rtf", "wer",
]


def _words(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def wer(hyp, ref) -> float:
    """Word error rate; strings are split on whitespace."""
    h, r = _words(hyp), _words(ref)
    if not r:
        raise UndefinedReferenceError("WER needs a non-empty reference")
    return levenshtein(h, r) / len(r)


# -- BLEU --------------------------------------------------------------------


@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    hyp_len: int
    ref_len: int

    @property
    def precisions(self) -> list[float]:
        return [m / t if t else 0.0 for m, t in zip(self.matches, self.totals)]

    @property
    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len > self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.hyp_len)

    @property
    def score(self) -> float:
        if any(m == 0 for m in self.matches):
            return 0.0
        log_p = sum(math.log(m / t) for m, t in zip(self.matches, self.totals)) / len(self.matches)
        return 100.0 * self.brevity_penalty * math.exp(log_p)


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu_stats(hyps: Sequence, refs: Sequence[Sequence], max_order: int = 4,
               lowercase: bool = False) -> BleuStats:
    """Corpus-level clipped n-gram counts and lengths.

    ``refs[i]`` is the list of references for ``hyps[i]``.  Clipping uses the
    maximum count of an n-gram over the references; the reference length of
    an utterance is the one closest to the hypothesis (shorter on ties).
    """
    if not hyps:
        raise ValueError("BLEU needs a non-empty corpus")
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} reference sets")
    fold = (lambda s: s.lower()) if lowercase else (lambda s: s)
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref_set in zip(hyps, refs):
        if not ref_set:
            raise ValueError("every hypothesis needs at least one reference")
        h = [fold(w) for w in _words(hyp)]
        rs = [[fold(w) for w in _words(r)] for r in ref_set]
        hyp_len += len(h)
        ref_len += min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
        for n in range(1, max_order + 1):
            counts = _ngrams(h, n)
            max_ref: Counter = Counter()
            for r in rs:
                max_ref |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return BleuStats(matches, totals, hyp_len, ref_len)


def corpus_bleu(hyps: Sequence, refs: Sequence[Sequence], max_order: int = 4,
                lowercase: bool = False) -> float:
    """Unsmoothed corpus BLEU in [0, 100]."""
    return bleu_stats(hyps, refs, max_order, lowercase).score


# -- speed -------------------------------------------------------------------


def rtf(wall_s: float, n_frames: int, frame_shift_ms: float = 10.0) -> float:
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    return wall_s / (n_frames * frame_shift_ms / 1000.0)


@dataclass
class ModeStats:
    wall_s: float
    asr_stage_s: float
    audio_s: float
    rtf: float
    counters: Counters
    runs_wall_s: list[float] = field(default_factory=list)
    mean_wall_s: float = 0.0


@dataclass
class BenchReport:
    modes: dict[str, ModeStats]
    baseline: str
    runs: int
    n_utts: int

    def speedup(self, mode: str, base: str | None = None) -> float:
        base = self.baseline if base is None else base
        if mode == base:
            return 1.0
        return self.modes[base].wall_s / self.modes[mode].wall_s

    def asr_speedup(self, mode: str, base: str | None = None) -> float:
        base = self.baseline if base is None else base
        if mode == base:
            return 1.0
        return self.modes[base].asr_stage_s / self.modes[mode].asr_stage_s

    def to_text(self) -> str:
        lines = [f"baseline: {self.baseline}", f"runs: {self.runs}", f"utterances: {self.n_utts}"]
        for name, s in self.modes.items():
            lines += [
                f"{name}.wall_s: {s.wall_s:.6f}",
                f"{name}.mean_wall_s: {s.mean_wall_s:.6f}",
                f"{name}.asr_stage_s: {s.asr_stage_s:.6f}",
                f"{name}.audio_s: {s.audio_s:.3f}",
                f"{name}.rtf: {s.rtf:.6f}",
                f"{name}.speedup: {self.speedup(name):.3f}",
                f"{name}.asr_speedup: {self.asr_speedup(name):.3f}",
                f"{name}.asr_decoder_passes: {s.counters.asr_decoder_passes}",
                f"{name}.st_decoder_passes: {s.counters.st_decoder_passes}",
                f"{name}.encoder_passes: {s.counters.encoder_passes}",
            ]
        return "\n".join(lines) + "\n"

    def to_table(self, delimiter: str = ",") -> str:
        header = ["mode", "wall_s", "asr_stage_s", "audio_s", "rtf", "speedup", "asr_speedup",
                  "asr_decoder_passes", "st_decoder_passes"]
        rows = [delimiter.join(header)]
        for name, s in self.modes.items():
            rows.append(delimiter.join(str(v) for v in [
                name, f"{s.wall_s:.6f}", f"{s.asr_stage_s:.6f}", f"{s.audio_s:.3f}", f"{s.rtf:.6f}",
                f"{self.speedup(name):.3f}", f"{self.asr_speedup(name):.3f}",
                s.counters.asr_decoder_passes, s.counters.st_decoder_passes]))
        return "\n".join(rows) + "\n"


def bench(model, features: Sequence[np.ndarray], modes: Sequence[DecodeConfig], runs: int = 5,
          baseline: str | None = None, frame_shift_ms: float = 10.0) -> BenchReport:
    """Single-stream decoding benchmark.

    Every utterance is decoded in every mode ``runs`` times.  Runs are
    interleaved across modes so slow drift in machine speed hits all modes
    alike.  Wall time per mode is the median over runs of the summed per
    utterance decode time; counters are totals over one run.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not modes:
        raise ValueError("need at least one mode")
    names = [m.mode for m in modes]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate modes {names}")
    audio_s = sum(x.shape[0] for x in features) * frame_shift_ms / 1000.0
    walls = {n: [] for n in names}
    asr = {n: [] for n in names}
    counters = {n: Counters() for n in names}
    for run in range(runs):
        for cfg in modes:
            total = asr_total = 0.0
            run_counters = Counters()
            for x in features:
                t0 = time.perf_counter()
                res = decode(model, x, cfg)
                total += time.perf_counter() - t0
                asr_total += res.timings["asr_stage_s"]
                run_counters = run_counters + res.counters
            walls[cfg.mode].append(total)
            asr[cfg.mode].append(asr_total)
            if run == 0:
                counters[cfg.mode] = run_counters
    stats = {}
    for n in names:
        wall = statistics.median(walls[n])
        stats[n] = ModeStats(
            wall_s=wall,
            asr_stage_s=statistics.median(asr[n]),
            audio_s=audio_s,
            rtf=wall / audio_s if audio_s else 0.0,
            counters=counters[n],
            runs_wall_s=walls[n],
            mean_wall_s=statistics.fmean(walls[n]),
        )
    return BenchReport(stats, baseline or names[0], runs, len(features))
