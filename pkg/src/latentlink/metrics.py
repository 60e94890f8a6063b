"""N-gram diversity and repetition metrics for generated text.

distinct3            unique 3-grams over total 3-grams, as a percentage
repetition4          share of sentences containing a 4-gram that occurs
                     more than once within the sentence
lexical_repetition   share of distinct 4-gram types occurring >= n times
                     across the corpus (n >= 2; defaults to 2)

N-grams never cross text boundaries. Sentence segmentation (rule v1) splits
on '.', '?' or '!' followed by whitespace or end of text.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

SENTENCE_RULE_VERSION = 1
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


class MetricConfigError(ValueError):
    pass


def ngrams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def distinct3(tokens: list[str]) -> float | None:
    """Unique/total 3-grams x 100; undefined (None) below 3 tokens."""
    grams = ngrams(list(tokens), 3)
    if not grams:
        return None
    return 100.0 * len(set(grams)) / len(grams)


def repetition4(sentences: list[list[str]]) -> float | None:
    """Percentage of sentences with any within-sentence repeated 4-gram."""
    if not sentences:
        return None
    flagged = sum(1 for s in sentences if _has_repeated_4gram(list(s)))
    return 100.0 * flagged / len(sentences)


def _has_repeated_4gram(tokens: list[str]) -> bool:
    counts = Counter(ngrams(tokens, 4))
    return any(c > 1 for c in counts.values())


def lexical_repetition(tokens_per_text: list[list[str]], n: int = 2) -> float:
    """Percentage of distinct 4-gram types with corpus count >= n."""
    if n < 2:
        raise MetricConfigError("lexical repetition needs n >= 2")
    counts: Counter = Counter()
    for tokens in tokens_per_text:
        counts.update(ngrams(list(tokens), 4))
    if not counts:
        return 0.0
    hits = sum(1 for c in counts.values() if c >= n)
    return 100.0 * hits / len(counts)


def split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in _SENTENCE_SPLIT.split(text)]
    return [p for p in parts if p]


def tokenize_for_metrics(text: str, mode: str = "word") -> list[str]:
    if mode == "word":
        return text.split()
    if mode == "char":
        return list(text)
    raise MetricConfigError(f"unknown metric tokenizer mode {mode!r}")


@dataclass
class RepetitionReport:
    """Corpus-level repetition metrics plus the raw counts behind them."""

    distinct3: float | None
    repetition4: float | None
    lexical_repetition: float
    lexical_n: int
    unique_trigrams: int
    total_trigrams: int
    fourgram_types: int
    sentence_flags: list[bool] = field(default_factory=list)
    tokenizer_mode: str = "word"
    sentence_rule_version: int = SENTENCE_RULE_VERSION

    def to_dict(self) -> dict:
        return {
            "distinct3": self.distinct3,
            "repetition4": self.repetition4,
            "lexical_repetition": self.lexical_repetition,
            "lexical_n": self.lexical_n,
            "unique_trigrams": self.unique_trigrams,
            "total_trigrams": self.total_trigrams,
            "fourgram_types": self.fourgram_types,
            "sentence_flags": list(self.sentence_flags),
            "tokenizer_mode": self.tokenizer_mode,
            "sentence_rule_version": self.sentence_rule_version,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RepetitionReport":
        return cls(**payload)


def repetition_report(texts: list[str], n: int = 2, mode: str = "word") -> RepetitionReport:
    """All three metrics over a corpus of texts."""
    tokens_per_text = [tokenize_for_metrics(t, mode) for t in texts]
    tri: Counter = Counter()
    for tokens in tokens_per_text:
        tri.update(ngrams(tokens, 3))
    total_tri = sum(tri.values())
    d3 = 100.0 * len(tri) / total_tri if total_tri else None

    sentences: list[list[str]] = []
    for text in texts:
        sentences.extend(tokenize_for_metrics(s, mode) for s in split_sentences(text))
    flags = [_has_repeated_4gram(s) for s in sentences]
    r4 = 100.0 * sum(flags) / len(flags) if flags else None

    four: Counter = Counter()
    for tokens in tokens_per_text:
        four.update(ngrams(tokens, 4))
    lr = lexical_repetition(tokens_per_text, n)

    return RepetitionReport(
        distinct3=d3,
        repetition4=r4,
        lexical_repetition=lr,
        lexical_n=n,
        unique_trigrams=len(tri),
        total_trigrams=total_tri,
        fourgram_types=len(four),
        sentence_flags=flags,
        tokenizer_mode=mode,
    )
