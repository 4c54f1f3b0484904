"""CTC algorithms over frame-level log-posteriors.

Posteriors are (T, V) arrays of log-probabilities with the blank symbol at
``BLANK`` (id 0).  All recursions run in log space with ``LOG_ZERO`` standing
in for log(0).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .numerics import LOG_ZERO, as_tensor, log_softmax, logsumexp

BLANK = 0
BRUTE_FORCE_LIMIT = 10**7


class InfeasibleAlignmentError(ValueError):
    """The label sequence cannot be aligned to the available frames."""


class InvalidTokenError(ValueError):
    """A token id is not allowed in this position (e.g. blank or mask)."""


class OracleTooLargeError(ValueError):
    """Brute-force enumeration would exceed the configured path budget."""


@dataclass(frozen=True)
class CollapsedOutput:
    tokens: list[int]
    confidences: list[float]
    frame_spans: list[tuple[int, int]]


def min_frames(labels) -> int:
    """Frames needed to emit ``labels``: one per token plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_greedy(post: np.ndarray, blank: int = BLANK, reduce: str = "max") -> CollapsedOutput:
    """Frame argmax, merge repeats, drop blanks.

    Each surviving token carries a confidence taken from its run of frames:
    the peak frame probability (``reduce="max"``) or the run average
    (``reduce="mean"``).
    """
    post = as_tensor(post)
    best = np.argmax(post, axis=-1)
    probs = np.exp(post[np.arange(len(best)), best])
    tokens, confs, spans = [], [], []
    start = 0
    for t in range(1, len(best) + 1):
        if t < len(best) and best[t] == best[start]:
            continue
        tok = int(best[start])
        if tok != blank:
            run = probs[start:t]
            conf = float(run.max() if reduce == "max" else run.mean())
            tokens.append(tok)
            confs.append(min(conf, 1.0))
            spans.append((start, t))
        start = t
    return CollapsedOutput(tokens, confs, spans)


def _extended(labels, blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _skip_allowed(ext: np.ndarray, blank: int) -> np.ndarray:
    allow = np.zeros(len(ext), dtype=bool)
    allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def _check_feasible(post: np.ndarray, labels) -> None:
    need = min_frames(labels)
    if need > post.shape[0]:
        raise InfeasibleAlignmentError(
            f"label of length {len(labels)} needs {need} frames, only {post.shape[0]} available")


def ctc_forward(post: np.ndarray, labels, blank: int = BLANK) -> np.ndarray:
    """Log forward variables alpha, shape (T, 2U+1)."""
    post = as_tensor(post)
    labels = list(labels)
    _check_feasible(post, labels)
    ext = _extended(labels, blank)
    skip = _skip_allowed(ext, blank)
    T, S = post.shape[0], len(ext)
    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = post[0, blank]
    if S > 1:
        alpha[0, 1] = post[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + post[t, ext]
    return np.maximum(alpha, LOG_ZERO)


def ctc_backward(post: np.ndarray, labels, blank: int = BLANK) -> np.ndarray:
    """Log backward variables beta (including the emission at t), shape (T, 2U+1)."""
    post = as_tensor(post)
    labels = list(labels)
    ext = _extended(labels, blank)
    skip = _skip_allowed(ext, blank)
    T, S = post.shape[0], len(ext)
    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = post[T - 1, blank]
    if S > 1:
        beta[T - 1, S - 2] = post[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        # a skip from s to s+2 is legal when s+2 may be entered by skipping
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + post[t, ext]
    return np.maximum(beta, LOG_ZERO)


def ctc_log_likelihood(post: np.ndarray, labels, blank: int = BLANK) -> float:
    alpha = ctc_forward(post, labels, blank)
    tail = alpha[-1, -2:] if alpha.shape[1] > 1 else alpha[-1, -1:]
    return float(logsumexp(tail))


def ctc_loss(post: np.ndarray, labels, blank: int = BLANK) -> float:
    """Negative log-probability of ``labels`` summed over all alignments."""
    return -ctc_log_likelihood(post, labels, blank)


def ctc_loss_grad(logits: np.ndarray, labels, blank: int = BLANK) -> np.ndarray:
    """Gradient of :func:`ctc_loss` (on ``log_softmax(logits)``) w.r.t. ``logits``."""
    logits = as_tensor(logits)
    logp = log_softmax(logits)
    labels = list(labels)
    alpha = ctc_forward(logp, labels, blank)
    beta = ctc_backward(logp, labels, blank)
    ext = _extended(labels, blank)
    tail = alpha[-1, -2:] if alpha.shape[1] > 1 else alpha[-1, -1:]
    log_total = logsumexp(tail)
    occupancy = alpha + beta - logp[:, ext]  # (T, S): log alpha*beta/y
    T, V = logp.shape
    gamma = np.full((T, V), LOG_ZERO)
    for k in np.unique(ext):
        gamma[:, k] = logsumexp(occupancy[:, ext == k], axis=1)
    return np.exp(logp) - np.exp(gamma - log_total)


def ctc_brute_force(post: np.ndarray, labels, blank: int = BLANK,
                    limit: int = BRUTE_FORCE_LIMIT) -> float:
    """Loss by explicit enumeration of every frame path (verification oracle)."""
    post = as_tensor(post)
    T, V = post.shape
    if V ** T > limit:
        raise OracleTooLargeError(f"{V}^{T} paths exceed the limit of {limit}")
    target = tuple(labels)
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if collapse(path, blank) == target:
            total += float(np.exp(sum(post[t, k] for t, k in enumerate(path))))
    if total == 0.0:
        raise InfeasibleAlignmentError("no frame path collapses to the label")
    return -float(np.log(total))


def collapse(path, blank: int = BLANK) -> tuple[int, ...]:
    out = []
    prev = None
    for k in path:
        if k != prev and k != blank:
            out.append(int(k))
        prev = k
    return tuple(out)


def brute_force_labelings(post: np.ndarray, blank: int = BLANK,
                          limit: int = BRUTE_FORCE_LIMIT) -> dict[tuple[int, ...], float]:
    """Probability of every reachable labeling, by enumeration."""
    post = as_tensor(post)
    T, V = post.shape
    if V ** T > limit:
        raise OracleTooLargeError(f"{V}^{T} paths exceed the limit of {limit}")
    probs: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(V), repeat=T):
        key = collapse(path, blank)
        probs[key] = probs.get(key, 0.0) + float(np.exp(sum(post[t, k] for t, k in enumerate(path))))
    return probs


# -- label-synchronous prefix scoring --------------------------------------


@dataclass(frozen=True)
class CTCPrefixState:
    """Forward variables of one prefix.

    ``r`` is (T, 2): log probability that frames 0..t emit the prefix and end
    in a non-blank (column 0) or blank (column 1).  ``log_psi`` is the prefix
    score of the prefix itself.
    """

    r: np.ndarray
    log_psi: float
    last: int | None


class CTCPrefixScorer:
    """Batched prefix scoring against one posterior matrix."""

    def __init__(self, post: np.ndarray, blank: int = BLANK, eos: int | None = None):
        self.post = as_tensor(post)
        self.blank = blank
        self.eos = eos
        self.T = self.post.shape[0]

    def initial_state(self) -> CTCPrefixState:
        r = np.full((self.T, 2), LOG_ZERO)
        r[:, 1] = np.cumsum(self.post[:, self.blank])
        return CTCPrefixState(r, 0.0, None)

    def extend(self, r: np.ndarray, last: np.ndarray, candidates: np.ndarray):
        """Score every candidate token for every hypothesis.

        ``r`` is (B, T, 2), ``last`` is (B,) with -1 for the empty prefix, and
        ``candidates`` is (C,) of non-blank ids.  Returns ``(log_psi, r_new)``
        with shapes (B, C) and (B, C, T, 2).
        """
        candidates = np.asarray(candidates, dtype=np.int64)
        if np.any(candidates == self.blank):
            raise InvalidTokenError("blank cannot extend a prefix")
        B, C, T = r.shape[0], len(candidates), self.T
        xc = self.post[:, candidates]  # (T, C)
        xb = self.post[:, self.blank]  # (T,)
        rn, rb = r[:, :, 0], r[:, :, 1]  # (B, T)
        both = np.logaddexp(rn, rb)
        same = (last[:, None] == candidates[None, :])  # (B, C)
        # phi[b, c, t]: mass of the old prefix at t that may be followed by c
        phi = np.where(same[:, :, None], rb[:, None, :], both[:, None, :])
        out = np.full((B, C, T, 2), LOG_ZERO)
        empty = last < 0
        out[:, :, 0, 0] = np.where(empty[:, None], xc[0][None, :], LOG_ZERO)
        for t in range(1, T):
            out[:, :, t, 0] = np.logaddexp(out[:, :, t - 1, 0], phi[:, :, t - 1]) + xc[t]
            out[:, :, t, 1] = np.logaddexp(out[:, :, t - 1, 0], out[:, :, t - 1, 1]) + xb[t]
        terms = np.concatenate([out[:, :, :1, 0], phi[:, :, :-1] + xc[1:].T[None]], axis=2)
        log_psi = logsumexp(terms, axis=2)
        return np.maximum(log_psi, LOG_ZERO), np.maximum(out, LOG_ZERO)

    def final(self, r: np.ndarray) -> np.ndarray:
        """Full-sequence log probability of each prefix (the eos extension)."""
        return np.logaddexp(r[..., -1, 0], r[..., -1, 1])


def ctc_prefix_score_init(post: np.ndarray, blank: int = BLANK) -> CTCPrefixState:
    return CTCPrefixScorer(post, blank).initial_state()


def ctc_prefix_score_extend(post: np.ndarray, state: CTCPrefixState, next_token: int,
                            eos: int | None = None, blank: int = BLANK):
    """Extend ``state`` by one token; returns ``(log_prob, new_state)``.

    ``log_prob`` is the log probability that the extended prefix is a prefix
    of the CTC output.  When ``next_token == eos`` it is instead the
    probability of the current prefix as a complete output, and the state is
    returned unchanged.
    """
    scorer = CTCPrefixScorer(post, blank)
    if eos is not None and next_token == eos:
        return float(scorer.final(state.r)), state
    if next_token == blank:
        raise InvalidTokenError("blank cannot extend a prefix")
    last = np.array([-1 if state.last is None else state.last])
    log_psi, r_new = scorer.extend(state.r[None], last, np.array([next_token]))
    score = float(log_psi[0, 0])
    return score, CTCPrefixState(r_new[0, 0], score, int(next_token))


def ctc_prefix_sequence_score(post: np.ndarray, labels, blank: int = BLANK) -> float:
    """Score ``labels`` as a complete output by repeated extension plus eos."""
    state = ctc_prefix_score_init(post, blank)
    for tok in labels:
        _, state = ctc_prefix_score_extend(post, state, tok, blank=blank)
    return float(CTCPrefixScorer(post, blank).final(state.r))
