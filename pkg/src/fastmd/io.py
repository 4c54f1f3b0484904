"""On-disk formats: tensor containers, manifests and corpus directories.

Tensor container layout (all integers little-endian uint32)::

    b"FMD1" | version | entry count
    per entry: name length | UTF-8 name | rank | dims... | float32 payload

Tensors are stored as float32 and widened to float64 on load.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .vocab import FormatError, Vocabulary, load_vocab, save_vocab

MAGIC = b"FMD1"
VERSION = 1


def dump_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.array(value, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def parse_tensors(data: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(data) < 12:
        raise FormatError(f"{source}: truncated header")
    if data[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str, entry: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{source}: truncated {what} in entry {entry}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    for i in range(count):
        label = f"#{i}"
        (name_len,) = struct.unpack("<I", take(4, "name length", label))
        try:
            name = take(name_len, "name", label).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: entry {label} has a non-UTF-8 name") from exc
        label = f"#{i} {name!r}"
        (rank,) = struct.unpack("<I", take(4, "rank", label))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims", label))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(4 * n, "payload", label)
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if pos != len(data):
        raise FormatError(f"{source}: {len(data) - pos} trailing bytes after {count} entries")
    return out


def save_checkpoint(weights: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(dump_tensors(weights))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return parse_tensors(Path(path).read_bytes(), str(path))


def save_model(model, path: str | Path) -> None:
    """Checkpoint plus a JSON sidecar (``<path>.json``) with the model config."""
    save_checkpoint(model.params, path)
    Path(f"{path}.json").write_text(json.dumps(model.config.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path):
    from .model import MDModel, MDModelConfig

    sidecar = Path(f"{path}.json")
    if not sidecar.exists():
        raise FormatError(f"{path}: missing config sidecar {sidecar}")
    config = MDModelConfig.from_dict(json.loads(sidecar.read_text()))
    return MDModel(config, load_checkpoint(path))


# -- manifests and corpora ---------------------------------------------------


@dataclass
class ManifestRecord:
    id: str
    feature_key: str
    src: str
    tgt: str
    n_frames: int


def write_manifest(records, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return records


@dataclass
class Corpus:
    records: list[ManifestRecord]
    features: dict[str, np.ndarray]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary

    def src_ids(self, rec: ManifestRecord) -> list[int]:
        return self.src_vocab.encode(rec.src.split())

    def tgt_ids(self, rec: ManifestRecord) -> list[int]:
        return self.tgt_vocab.encode(rec.tgt.split())


def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_manifest(corpus.records, d / "manifest.jsonl")
    save_checkpoint(corpus.features, d / "feats.fmd")
    save_vocab(corpus.src_vocab, d / "src_vocab.txt")
    save_vocab(corpus.tgt_vocab, d / "tgt_vocab.txt")


def load_corpus(directory: str | Path) -> Corpus:
    d = Path(directory)
    records = read_manifest(d / "manifest.jsonl")
    feats = load_checkpoint(d / "feats.fmd")
    for rec in records:
        if rec.feature_key not in feats:
            raise FormatError(f"{rec.id}: feature key {rec.feature_key!r} not in feats.fmd")
        if feats[rec.feature_key].shape[0] != rec.n_frames:
            raise FormatError(
                f"{rec.id}: manifest says {rec.n_frames} frames, container has {feats[rec.feature_key].shape[0]}")
    return Corpus(records, feats, load_vocab(d / "src_vocab.txt"), load_vocab(d / "tgt_vocab.txt"))
