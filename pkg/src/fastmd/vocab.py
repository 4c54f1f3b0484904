"""Token vocabularies with a fixed reserved-id layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

BLANK_ID = 0
UNK_ID = 1
SOS_EOS_ID = 2
MASK_ID = 3

RESERVED = ("<blank>", "<unk>", "<sos/eos>", "<mask>")
WORD_BOUNDARY = "▁"


class FormatError(ValueError):
    """Raised for malformed vocabulary, checkpoint or manifest files."""


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise FormatError(f"first four tokens must be {RESERVED}")
        if len(self.tokens) < 5:
            raise FormatError("vocabulary needs at least one non-reserved token")
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise FormatError(f"duplicate token {tok!r} at line {i + 1}")
            self.index[tok] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, pieces) -> list[int]:
        return [self.index.get(p, UNK_ID) for p in pieces]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def detokenize(self, ids) -> str:
        """Join pieces into text; the word-boundary marker becomes a space."""
        text = "".join(self.tokens[i] for i in ids if i != MASK_ID)
        return " ".join(text.replace(WORD_BOUNDARY, " ").split())

    @classmethod
    def from_pieces(cls, pieces) -> "Vocabulary":
        return cls(list(RESERVED) + list(pieces))


def load_vocab(path: str | Path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, expected in enumerate(RESERVED, start=1):
        if len(lines) < lineno:
            raise FormatError(f"{path}: missing reserved token {expected!r} at line {lineno}")
        if lines[lineno - 1] != expected:
            raise FormatError(
                f"{path}: line {lineno} must be {expected!r}, found {lines[lineno - 1]!r}")
    seen: dict[str, int] = {}
    for lineno, tok in enumerate(lines, start=1):
        if not tok:
            raise FormatError(f"{path}: empty token at line {lineno}")
        if tok in seen:
            raise FormatError(f"{path}: duplicate token {tok!r} at line {lineno} (first at {seen[tok]})")
        seen[tok] = lineno
    return Vocabulary(lines)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")
