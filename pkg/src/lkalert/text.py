"""Shared text processing: tokenization, detokenization, stop words, vocabulary.

One tokenizer serves the CAN-snapshot/target texts fed to the model and
the text-overlap metrics, so candidate and reference strings are always
normalized the same way: lowercase, every non-alphanumeric character is
a separator.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

_SEPARATORS = re.compile(r"[^0-9a-z]+")

# Fixed 30-entry English function-word list used by the explanation
# term-frequency summary.
STOP_WORDS = frozenset(
    {
        "the", "a", "an", "is", "are", "was", "were", "be", "been", "being",
        "to", "of", "in", "on", "at", "and", "or", "but", "if", "then",
        "there", "it", "its", "this", "that", "with", "as", "for", "by", "from",
    }
)

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every run of non-alphanumeric characters."""
    return [t for t in _SEPARATORS.split(text.lower()) if t]


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Vocabulary:
    """Token table shared by the encoder and the decoder.

    Ids 0..3 are the specials; the rest are corpus tokens ordered by
    descending frequency, ties broken alphabetically, so a vocabulary is
    a pure function of its corpus.
    """

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the four special tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, corpus: Iterable[str]) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for text in corpus:
            counts.update(tokenize(text))
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tokens=SPECIAL_TOKENS + tuple(t for t, _ in ordered))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self._index.get(t, UNK_ID) for t in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Map ids back to tokens, dropping specials."""
        return [self.tokens[i] for i in ids if i >= len(SPECIAL_TOKENS)]

    def save(self, path: Path | str) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tokens=tuple(lines))

    @property
    def sha256(self) -> str:
        payload = "\n".join(self.tokens).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()
