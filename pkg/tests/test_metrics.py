import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import features, tiny_model
from fastmd.decode import DecodeConfig
from fastmd.metrics import bench, bleu_stats, corpus_bleu, levenshtein, rtf, wer
from fastmd.sampling import UndefinedReferenceError

words = st.lists(st.sampled_from("a b c d e".split()), max_size=12)


def test_wer_examples():
    assert wer("a b c", "a x c") == pytest.approx(1 / 3)
    assert wer("a b", "a b") == 0.0
    assert wer("a b c d", "a") == 3.0
    with pytest.raises(UndefinedReferenceError):
        wer("a", "")


@given(words, words, words)
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert abs(len(a) - len(b)) <= levenshtein(a, b) <= max(len(a), len(b))


def test_bleu_perfect():
    hyps = ["the cat sat on the mat", "a dog ran in the park today"]
    assert corpus_bleu(hyps, [[h] for h in hyps]) == pytest.approx(100.0)


def test_bleu_clipped_unigram_precision():
    s = bleu_stats(["the the the the the the the"], [["the cat is on the mat"]])
    assert s.matches[0] == 2 and s.totals[0] == 7
    assert s.precisions[0] == pytest.approx(2 / 7)


def test_bleu_multi_reference_clipping_and_closest_length():
    s = bleu_stats(["the the cat"], [["the cat", "the the dog is here"]], max_order=1)
    assert s.matches == [3]
    # lengths 2 and 5 are both 1 and 2 away from 3; the closer (2) wins
    assert s.ref_len == 2
    tie = bleu_stats(["a b c"], [["a b", "a b c d"]], max_order=1)
    assert tie.ref_len == 2


def test_bleu_hand_computed():
    hyp, ref = "a b c d e", "a b c d f g"
    # precisions 4/5, 3/4, 2/3, 1/2; brevity exp(1 - 6/5)
    expected = 100 * math.exp(1 - 6 / 5) * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
    assert corpus_bleu([hyp], [[ref]]) == pytest.approx(expected, abs=1e-10)


def test_bleu_zero_without_four_gram_match():
    assert corpus_bleu(["a b c x d"], [["a b c y d"]]) == 0.0


def test_bleu_lowercase_and_errors():
    assert corpus_bleu(["The Cat sat down"], [["the cat sat down"]], lowercase=True) == pytest.approx(100)
    assert corpus_bleu(["The Cat sat down"], [["the cat sat down"]]) < 100
    with pytest.raises(ValueError):
        corpus_bleu([], [])
    with pytest.raises(ValueError):
        corpus_bleu(["a"], [[]])


@settings(max_examples=30)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=6), st.randoms())
def test_bleu_permutation_invariant(pairs, rnd):
    hyps = [" ".join(h) for h, _ in pairs]
    refs = [[" ".join(r)] for _, r in pairs]
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert corpus_bleu(hyps, refs) == corpus_bleu([hyps[i] for i in order], [refs[i] for i in order])


def test_rtf_arithmetic():
    assert rtf(2.0, 1000) == pytest.approx(0.2)
    assert rtf(0.0, 10) == 0.0
    assert rtf(1.0, 100, frame_shift_ms=20) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rtf(1.0, 0)


def test_bench_report():
    model = tiny_model(0)
    feats = [features(i, 40 + 8 * i) for i in range(3)]
    rep = bench(model, feats, [DecodeConfig("slow", b_asr=2), DecodeConfig("fast_parallel")], runs=2)
    assert rep.speedup("slow") == 1.0
    assert rep.modes["fast_parallel"].counters.asr_decoder_passes == 3
    assert rep.modes["fast_parallel"].counters.asr_decoder_passes < rep.modes["slow"].counters.asr_decoder_passes
    for s in rep.modes.values():
        assert s.rtf == pytest.approx(s.wall_s / s.audio_s)
        assert len(s.runs_wall_s) == 2
    assert s.audio_s == pytest.approx(sum(f.shape[0] for f in feats) / 100)
    text = rep.to_text()
    assert "fast_parallel.speedup:" in text and "baseline: slow" in text
    table = rep.to_table().splitlines()
    assert table[0].startswith("mode,") and len(table) == 3


def test_bench_rejects_bad_arguments():
    with pytest.raises(ValueError):
        bench(tiny_model(0), [features(0, 40)], [DecodeConfig()], runs=0)
