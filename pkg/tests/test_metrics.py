"""Repetition-metric oracles: hand-enumerated values plus recount properties."""

from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentlink import metrics as M


def test_distinct3_all_unique():
    assert M.distinct3("a b c d e".split()) == 100.0


def test_distinct3_hand_corpus():
    tokens = ["the", "cat", "sat", "the", "cat", "sat", "the", "cat"]
    # trigrams: 6 total, 3 unique
    assert M.distinct3(tokens) == 50.0


def test_distinct3_degenerate_length():
    assert M.distinct3(["a", "b"]) is None


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=3, max_size=40))
def test_distinct3_matches_bruteforce_recount(tokens):
    grams = [tuple(tokens[i:i + 3]) for i in range(len(tokens) - 2)]
    expected = 100.0 * len(set(grams)) / len(grams)
    assert M.distinct3(tokens) == pytest.approx(expected)


def test_repetition4_repeating_sentence():
    assert M.repetition4([["a", "b", "a", "b", "a", "b", "a", "b"]]) == 100.0


def test_repetition4_all_distinct():
    assert M.repetition4([list("abcdefgh")]) == 0.0


def test_repetition4_half():
    clean = list("abcdefgh")
    repeating = ["x", "y", "x", "y", "x", "y", "x", "y"]
    assert M.repetition4([clean, repeating]) == 50.0


def test_lexical_repetition_all_unique():
    for n in (2, 3, 5):
        assert M.lexical_repetition([list("abcdefgh")], n=n) == 0.0


def test_lexical_repetition_cyclic_corpus():
    tokens = ["x", "y", "z", "w"] * 3  # 12 tokens, 4 types with counts 3,2,2,2
    assert M.lexical_repetition([tokens], n=2) == 100.0


def test_lexical_repetition_single_occurrence():
    assert M.lexical_repetition([["p", "q", "r", "s"]], n=2) == 0.0


def test_lexical_repetition_rejects_small_n():
    with pytest.raises(M.MetricConfigError):
        M.lexical_repetition([list("abcd")], n=1)


def test_sentence_split_rule():
    text = "First part. Second part? Third! trailing"
    assert M.split_sentences(text) == ["First part.", "Second part?", "Third!", "trailing"]


def test_sentence_split_does_not_break_decimals():
    assert M.split_sentences("value 3.5 stays") == ["value 3.5 stays"]


def test_repetition_report_roundtrip_and_counts():
    texts = ["the cat sat the cat sat the cat", "a b c d e"]
    report = M.repetition_report(texts, n=2, mode="word")
    assert report.total_trigrams == (8 - 2) + (5 - 2)
    clone = M.RepetitionReport.from_dict(report.to_dict())
    assert clone == report


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("ab"), min_size=4, max_size=20), min_size=1, max_size=4))
def test_lexical_repetition_matches_recount(texts):
    counts = Counter()
    for tokens in texts:
        for i in range(len(tokens) - 3):
            counts[tuple(tokens[i:i + 4])] += 1
    expected = 100.0 * sum(1 for c in counts.values() if c >= 2) / len(counts)
    assert M.lexical_repetition(texts, n=2) == pytest.approx(expected)
