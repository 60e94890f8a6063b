"""Vocabulary, synthetic generators, and JSONL ingestion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentlink import data as D
from latentlink.encoding import corpus_charset
from latentlink.vocab import EOS, MASK, N_RESERVED, PAD, SEP, Vocabulary, VocabularyError


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.from_texts([corpus_charset()])


def test_reserved_ids_distinct_and_dense(vocab):
    assert PAD == 0 and MASK == 1
    assert len({PAD, MASK, EOS, SEP}) == 4
    ids = vocab.encode("A=9")
    assert (ids >= N_RESERVED).all()


def test_roundtrip_empty(vocab):
    assert vocab.decode(vocab.encode("")) == ""


def test_roundtrip_example(vocab):
    assert vocab.decode(vocab.encode("12+7")) == "12+7"


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet=sorted(set(corpus_charset())), max_size=40))
def test_roundtrip_any_clean_text(text):
    vocab = Vocabulary.from_texts([corpus_charset()])
    assert vocab.decode(vocab.encode(text)) == text


def test_unknown_symbol_error_or_unk(vocab):
    with pytest.raises(VocabularyError):
        vocab.encode("~")
    ids = vocab.encode("~", on_unknown="unk")
    assert ids[0] == 5  # UNK


def test_word_mode_roundtrip():
    v = Vocabulary.from_texts(["the cat sat on the mat"], mode="word")
    assert v.decode(v.encode("cat sat mat")) == "cat sat mat"


def test_decode_strict_rejects_structural(vocab):
    with pytest.raises(VocabularyError):
        vocab.decode([PAD])
    assert vocab.decode([PAD, *vocab.encode("A")], strict=False) == "A"


# -- synthetic generation -----------------------------------------------------


def test_generator_determinism():
    a = D.generate_synthetic("kv-lookup", 50, seed=7)
    b = D.generate_synthetic("kv-lookup", 50, seed=7)
    assert [s.question for s in a] == [s.question for s in b]
    assert [s.answer for s in a] == [s.answer for s in b]


def test_unknown_family_rejected():
    with pytest.raises(D.DatasetError):
        D.generate_synthetic("riddles", 5, seed=0)


def test_kv_format_matches_convention():
    ds = D.generate_synthetic("kv-lookup", 30, seed=3, n_query=1)
    for s in ds:
        body, _, query = s.question.rpartition("; ")
        assert query.endswith("?")
        entries = body.split(";")
        assert all("=" in e for e in entries)


def test_arith_format_matches_convention():
    ds = D.generate_synthetic("arith-chain", 30, seed=3)
    for s in ds:
        assert " mod " in s.question
        assert s.question.endswith(" = ?")


def test_every_family_verifies_against_independent_evaluator():
    for family in D.FAMILIES:
        ds = D.generate_synthetic(family, 120, seed=11)
        for s in ds:
            assert D.independent_answer(s) == s.answer, s.question


def test_arith_worked_example():
    s = D.TaskSample(question="((3+4)*2) mod 5 = ?", answer="4", family="arith-chain")
    assert D.independent_answer(s) == "4"


def test_kv_worked_example():
    s = D.TaskSample(question="A=9;B=A;C=B; C?", answer="9", family="kv-lookup")
    assert D.independent_answer(s) == "9"


def test_splits_disjoint_and_reproducible():
    tr1, va1, te1 = D.generate_splits("kv-lookup", (60, 20, 20), seed=5)
    tr2, va2, te2 = D.generate_splits("kv-lookup", (60, 20, 20), seed=5)
    assert tr1.questions() == tr2.questions()
    assert va1.questions() == va2.questions()
    assert te1.questions() == te2.questions()
    assert not (tr1.questions() & va1.questions())
    assert not (tr1.questions() & te1.questions())
    assert not (va1.questions() & te1.questions())
    assert (len(tr1), len(va1), len(te1)) == (60, 20, 20)


# -- JSONL -----------------------------------------------------------------------


def test_jsonl_roundtrip(tmp_path):
    ds = D.generate_synthetic("arith-chain", 10, seed=1)
    path = tmp_path / "data.jsonl"
    D.save_jsonl(ds, path)
    loaded = D.load_jsonl(path)
    assert [s.question for s in loaded] == [s.question for s in ds]
    assert [s.answer for s in loaded] == [s.answer for s in ds]
    assert [s.plan for s in loaded] == [s.plan for s in ds]


def test_jsonl_two_lines(tmp_path):
    path = tmp_path / "two.jsonl"
    path.write_text('{"question": "q1", "answer": "1"}\n{"question": "q2", "answer": "2"}\n')
    assert len(D.load_jsonl(path)) == 2


def test_jsonl_missing_answer_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"question": "q1", "answer": "1"}\n{"question": "q2"}\n')
    with pytest.raises(D.DatasetError) as err:
        D.load_jsonl(path)
    assert err.value.line_number == 2


def test_jsonl_crlf_equals_lf(tmp_path):
    body = '{"question": "q1", "answer": "1"}\n{"question": "q2", "answer": "2"}\n'
    lf = tmp_path / "lf.jsonl"
    crlf = tmp_path / "crlf.jsonl"
    lf.write_bytes(body.encode())
    crlf.write_bytes(body.replace("\n", "\r\n").encode())
    assert [s.question for s in D.load_jsonl(lf)] == [s.question for s in D.load_jsonl(crlf)]


def test_empty_answer_rejected():
    with pytest.raises(D.DatasetError):
        D.TaskSample(question="q", answer="")
