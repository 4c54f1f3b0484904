import struct
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_model
from fixtures.make_golden import golden_tensors, golden_vocab
from fastmd.io import (
    dump_tensors,
    load_checkpoint,
    load_corpus,
    load_model,
    parse_tensors,
    read_manifest,
    save_checkpoint,
    save_corpus,
    save_model,
)
from fastmd.synthetic import gen_synthetic
from fastmd.vocab import FormatError, load_vocab, save_vocab

FIXTURES = Path(__file__).parent / "fixtures"


def test_layout_written_by_hand():
    expected = (b"FMD1" + struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"w"
                + struct.pack("<III", 2, 1, 2) + struct.pack("<2f", 1.5, -2.0))
    assert dump_tensors({"w": np.array([[1.5, -2.0]])}) == expected


def test_round_trip_quantisation(tmp_path):
    rng = np.random.default_rng(0)
    weights = {"a": rng.normal(size=(3, 4)), "b.c": rng.normal(size=7) * 1e3, "s": np.array(3.0)}
    save_checkpoint(weights, tmp_path / "m.fmd")
    back = load_checkpoint(tmp_path / "m.fmd")
    assert list(back) == list(weights)
    for k, v in weights.items():
        assert back[k].dtype == np.float64 and back[k].shape == v.shape
        np.testing.assert_allclose(back[k], v, rtol=2.0 ** -23)


def test_empty_checkpoint(tmp_path):
    save_checkpoint({}, tmp_path / "e.fmd")
    assert (tmp_path / "e.fmd").read_bytes() == b"FMD1" + struct.pack("<II", 1, 0)
    assert load_checkpoint(tmp_path / "e.fmd") == {}


def test_format_errors_name_the_entry():
    data = dump_tensors({"first": np.ones(2), "second": np.ones(3)})
    with pytest.raises(FormatError, match="magic"):
        parse_tensors(b"XMD1" + data[4:])
    with pytest.raises(FormatError, match="version"):
        parse_tensors(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(FormatError, match="'second'"):
        parse_tensors(data[:-4])
    with pytest.raises(FormatError, match="trailing"):
        parse_tensors(data + b"\0")
    with pytest.raises(FormatError, match="truncated"):
        parse_tensors(b"FMD1")


def test_golden_checkpoint_bytes(tmp_path):
    golden = (FIXTURES / "golden.fmd").read_bytes()
    save_checkpoint(golden_tensors(), tmp_path / "g.fmd")
    assert (tmp_path / "g.fmd").read_bytes() == golden
    loaded = load_checkpoint(FIXTURES / "golden.fmd")
    assert dump_tensors(loaded) == golden


def test_golden_vocab_bytes(tmp_path):
    golden = (FIXTURES / "golden_vocab.txt").read_bytes()
    save_vocab(golden_vocab(), tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_bytes() == golden
    save_vocab(load_vocab(FIXTURES / "golden_vocab.txt"), tmp_path / "v2.txt")
    assert (tmp_path / "v2.txt").read_bytes() == golden


def test_model_round_trip(tmp_path):
    model = tiny_model(0)
    save_model(model, tmp_path / "m.fmd")
    back = load_model(tmp_path / "m.fmd")
    assert back.config == model.config
    assert back.params.keys() == model.params.keys()
    (tmp_path / "m.fmd.json").unlink()
    with pytest.raises(FormatError, match="sidecar"):
        load_model(tmp_path / "m.fmd")


def test_synthetic_construction_laws():
    c = gen_synthetic(3, 12, src_vocab_size=7, len_range=(2, 6), feature_dim=5)
    perm = {}
    for rec in c.records:
        src, tgt = c.src_ids(rec), c.tgt_ids(rec)
        assert 2 <= len(src) <= 6 and len(tgt) == len(src)
        assert 6 * len(src) <= rec.n_frames <= 10 * len(src)
        assert c.features[rec.feature_key].shape == (rec.n_frames, 5)
        for s, t in zip(src, reversed(tgt)):
            assert perm.setdefault(s, t) == t
    assert len(set(perm.values())) == len(perm)


def test_synthetic_is_deterministic(tmp_path):
    save_corpus(gen_synthetic(5, 4), tmp_path / "a")
    save_corpus(gen_synthetic(5, 4), tmp_path / "b")
    for name in ("manifest.jsonl", "feats.fmd", "src_vocab.txt", "tgt_vocab.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "feats.fmd").read_bytes() != dump_tensors(gen_synthetic(6, 4).features)


def test_synthetic_min_frames():
    c = gen_synthetic(0, 3, len_range=(40, 60), min_frames=400)
    assert all(r.n_frames >= 400 for r in c.records)


def test_corpus_round_trip_and_validation(tmp_path):
    c = gen_synthetic(1, 3)
    save_corpus(c, tmp_path)
    back = load_corpus(tmp_path)
    assert [r.src for r in back.records] == [r.src for r in c.records]
    recs = read_manifest(tmp_path / "manifest.jsonl")
    assert recs[0].id == "utt00000"
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    (tmp_path / "manifest.jsonl").write_text(lines[0].replace(f'"n_frames": {recs[0].n_frames}',
                                                             '"n_frames": 1') + "\n")
    with pytest.raises(FormatError, match="frames"):
        load_corpus(tmp_path)
    (tmp_path / "manifest.jsonl").write_text("{not json\n")
    with pytest.raises(FormatError, match=":1"):
        read_manifest(tmp_path / "manifest.jsonl")
