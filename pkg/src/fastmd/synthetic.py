"""Seeded synthetic speech-translation corpora for self-contained testing.

Each source token owns a random feature vector; an utterance's features are
those vectors held for 6 to 10 frames each, plus Gaussian noise.  The
translation maps every source token through a fixed permutation and reverses
the order, so it is a deterministic function of the transcript.
"""

from __future__ import annotations

import numpy as np

from .io import Corpus, ManifestRecord
from .vocab import Vocabulary

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"
FRAMES_PER_TOKEN = (6, 10)
NOISE_STD = 0.1


def _word(i: int, alphabet_upper: bool = False) -> str:
    syllables = [c + v for c in CONSONANTS for v in VOWELS]
    n = len(syllables)
    word = syllables[i % n] + (syllables[i // n % n] if i >= n else "")
    return "▁" + (word.upper() if alphabet_upper else word)


def gen_synthetic(seed: int, n_utts: int, src_vocab_size: int = 20, len_range=(3, 8),
                  feature_dim: int = 20, min_frames: int = 0) -> Corpus:
    """Generate a corpus; utterances shorter than ``min_frames`` are redrawn."""
    if src_vocab_size < 2:
        raise ValueError("need at least 2 non-reserved source tokens")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad len_range {len_range}")
    rng = np.random.default_rng(seed)
    src_vocab = Vocabulary.from_pieces([_word(i) for i in range(src_vocab_size)])
    tgt_vocab = Vocabulary.from_pieces([_word(i, alphabet_upper=True) for i in range(src_vocab_size)])
    table = rng.normal(size=(src_vocab_size, feature_dim))
    perm = rng.permutation(src_vocab_size)

    records, feats = [], {}
    while len(records) < n_utts:
        length = int(rng.integers(lo, hi + 1))
        toks = rng.integers(0, src_vocab_size, size=length)
        reps = rng.integers(FRAMES_PER_TOKEN[0], FRAMES_PER_TOKEN[1] + 1, size=length)
        x = np.repeat(table[toks], reps, axis=0)
        x = x + NOISE_STD * rng.normal(size=x.shape)
        if x.shape[0] < min_frames:
            continue
        uid = f"utt{len(records):05d}"
        src = " ".join(src_vocab.tokens[4 + int(t)] for t in toks)
        tgt = " ".join(tgt_vocab.tokens[4 + int(perm[t])] for t in toks[::-1])
        records.append(ManifestRecord(uid, uid, src, tgt, int(x.shape[0])))
        feats[uid] = x
    return Corpus(records, feats, src_vocab, tgt_vocab)
