"""Self-checks runnable from the command line (``fastmd verify``).

Each check returns a :class:`CheckResult`; a suite passes when all do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctc import (
    brute_force_labelings,
    ctc_brute_force,
    ctc_loss,
    ctc_loss_grad,
    ctc_prefix_sequence_score,
    min_frames,
)
from .decode import DecodeConfig, asr_beam_search, greedy_asr
from .model import MDModel, MDModelConfig
from .numerics import log_softmax

SUITES = ("ctc", "beam", "all")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_case(rng, t_max=8, v_max=4, l_max=3):
    t = int(rng.integers(1, t_max + 1))
    v = int(rng.integers(2, v_max + 1))
    while True:
        n = int(rng.integers(0, l_max + 1))
        labels = [int(k) for k in rng.integers(1, v, size=n)]
        if min_frames(labels) <= t:
            break
    logits = rng.normal(scale=2.0, size=(t, v))
    return log_softmax(logits), labels, logits


def check_ctc_oracle(seed: int = 0, n: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        post, labels, _ = _random_case(rng)
        worst = max(worst, abs(ctc_loss(post, labels) - ctc_brute_force(post, labels)))
    return CheckResult("ctc_oracle", worst <= 1e-9, f"max |dp - enumeration| = {worst:.3e} over {n} cases")


def check_ctc_uniform() -> CheckResult:
    loss = ctc_loss(np.full((3, 3), -math.log(3.0)), [1])
    err = abs(loss + math.log(6.0 / 27.0))
    return CheckResult("ctc_uniform", err <= 1e-9, f"loss = {loss:.12f}, error {err:.3e}")


def check_ctc_gradient(seed: int = 0, n: int = 20, step: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        logits = rng.normal(size=(6, 4))
        labels = [int(k) for k in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
        grad = ctc_loss_grad(logits, labels)
        fd = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            up, down = logits.copy(), logits.copy()
            up[idx] += step
            down[idx] -= step
            fd[idx] = (ctc_loss(log_softmax(up), labels) - ctc_loss(log_softmax(down), labels)) / (2 * step)
        worst = max(worst, float(np.max(np.abs(grad - fd))))
    return CheckResult("ctc_gradient", worst <= 1e-5, f"max |analytic - central diff| = {worst:.3e}")


def check_prefix_completeness(seed: int = 0, n: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, 5))
        post = log_softmax(rng.normal(size=(t, 3)))
        total = 0.0
        for labels in brute_force_labelings(post):
            score = ctc_prefix_sequence_score(post, list(labels))
            worst = max(worst, abs(score + ctc_loss(post, list(labels))))
            total += math.exp(score)
        worst = max(worst, abs(total - 1.0))
    return CheckResult("ctc_prefix_completeness", worst <= 1e-9, f"max deviation {worst:.3e}")


def check_beam_greedy(seed: int = 0, n: int = 10) -> CheckResult:
    mismatches = 0
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        cfg = MDModelConfig(asr_vocab_size=9, st_vocab_size=9, feat_dim=8, asr_encoder_layers=2,
                            asr_decoder_layers=2, st_encoder_layers=1, st_decoder_layers=1,
                            d_model=16, d_ff=32, heads=2, interctc_layers=(1,))
        model = MDModel.initialize(cfg, seed=seed + i)
        x = rng.normal(size=(int(rng.integers(20, 48)), cfg.feat_dim))
        h = model.encode_asr(x).h_asr
        dcfg = DecodeConfig(b_asr=1)
        hyp, _ = asr_beam_search(model, h, model.search_posteriors(h), dcfg)
        if list(hyp.tokens) != greedy_asr(model, h, dcfg.max_len(h.shape[0])):
            mismatches += 1
    return CheckResult("beam_greedy", mismatches == 0, f"{mismatches}/{n} mismatches")


def run_suite(suite: str, seed: int = 0) -> list[CheckResult]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    out = []
    if suite in ("ctc", "all"):
        out += [check_ctc_oracle(seed), check_ctc_uniform(), check_ctc_gradient(seed),
                check_prefix_completeness(seed)]
    if suite in ("beam", "all"):
        out.append(check_beam_greedy(seed))
    return out
