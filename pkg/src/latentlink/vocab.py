"""Shared token vocabulary for the planner and executor.

One inventory serves both models: the heterogeneity this package studies is
in hidden spaces, not in the token set. Character-level by default; a
word-level mode (whitespace split) is available by configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

PAD, MASK, BOS, EOS, SEP, UNK = range(6)
RESERVED = ("<pad>", "<mask>", "<bos>", "<eos>", "<sep>", "<unk>")
N_RESERVED = len(RESERVED)


class VocabularyError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Dense symbol <-> id map with reserved structural ids 0..5."""

    symbols: list[str]
    mode: str = "char"
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("char", "word"):
            raise VocabularyError(f"unknown tokenizer mode {self.mode!r}")
        if len(set(self.symbols)) != len(self.symbols):
            raise VocabularyError("duplicate symbols")
        for sym in self.symbols:
            if sym in RESERVED:
                raise VocabularyError(f"symbol {sym!r} collides with a reserved name")
        self._index = {s: i + N_RESERVED for i, s in enumerate(self.symbols)}

    @classmethod
    def from_texts(cls, texts: Iterable[str], mode: str = "char") -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(text if mode == "char" else text.split())
        return cls(symbols=sorted(seen), mode=mode)

    @property
    def size(self) -> int:
        return N_RESERVED + len(self.symbols)

    def id_of(self, symbol: str) -> int:
        return self._index[symbol]

    def encode(self, text: str, on_unknown: str = "error") -> np.ndarray:
        """Text to token ids. Unknown symbols either raise or map to UNK."""
        pieces = list(text) if self.mode == "char" else text.split()
        ids = np.empty(len(pieces), dtype=np.int64)
        for i, piece in enumerate(pieces):
            hit = self._index.get(piece)
            if hit is None:
                if on_unknown == "unk":
                    hit = UNK
                else:
                    raise VocabularyError(f"symbol {piece!r} not in vocabulary")
            ids[i] = hit
        return ids

    def decode(self, ids, strict: bool = True) -> str:
        """Token ids back to text. Non-strict mode drops structural tokens."""
        parts: list[str] = []
        for t in np.asarray(ids, dtype=np.int64):
            t = int(t)
            if t < 0 or t >= self.size:
                raise VocabularyError(f"token id {t} out of range")
            if t < N_RESERVED:
                if strict:
                    raise VocabularyError(f"structural token {RESERVED[t]} in decode")
                continue
            parts.append(self.symbols[t - N_RESERVED])
        joiner = "" if self.mode == "char" else " "
        return joiner.join(parts)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "symbols": self.symbols}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocabulary":
        return cls(symbols=list(payload["symbols"]), mode=payload["mode"])
