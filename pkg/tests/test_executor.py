"""AR executor: likelihood, decoding, causality, low-rank adapters."""

import math

import numpy as np
import pytest

from latentlink import executor as E
from latentlink import tensor as T
from latentlink.vocab import EOS
from fdcheck import assert_grad_close, numeric_gradient


def uniform_logit_model(vocab_size=4, dim=16):
    model = E.AutoregressiveLM(vocab_size, dim=dim, n_layers=1, n_heads=2, max_len=32,
                               rng=np.random.default_rng(2))
    model.core.head.w.data[:] = 0.0
    return model


def random_prefix(model, length=4, seed=0, requires_grad=False):
    rng = np.random.default_rng(seed)
    rows = T.Tensor(rng.normal(size=(length, model.dim)).astype(np.float64)
                    if model.core.dtype == np.float64
                    else rng.normal(size=(length, model.dim)).astype(np.float32),
                    requires_grad=requires_grad)
    return E.EmbeddingSequence(rows, [E.SEGMENT_QUESTION] * length)


# -- embedding sequence contracts -------------------------------------------------


def test_plan_rows_must_precede_question_rows():
    rows = T.Tensor(np.zeros((3, 8), dtype=np.float32))
    with pytest.raises(T.ContractError):
        E.EmbeddingSequence(rows, [E.SEGMENT_QUESTION, E.SEGMENT_PLAN, E.SEGMENT_QUESTION])
    seq = E.EmbeddingSequence(rows, [E.SEGMENT_PLAN, E.SEGMENT_PLAN, E.SEGMENT_QUESTION])
    assert len(seq) == 3


# -- nll ---------------------------------------------------------------------------


def test_nll_uniform_analytic():
    model = uniform_logit_model(vocab_size=4)
    prefix = random_prefix(model, length=3)
    answer = np.array([0, 2, 3])
    loss = E.nll(model, prefix, answer)
    assert abs(loss.item() - 3 * math.log(4)) < 1e-4
    assert abs(loss.item() - 4.158883) < 1e-4


def test_nll_requires_answer():
    model = uniform_logit_model()
    with pytest.raises(T.ContractError):
        E.nll(model, random_prefix(model), np.array([], dtype=np.int64))


def test_nll_width_mismatch():
    model = uniform_logit_model()
    bad = E.EmbeddingSequence(T.Tensor(np.zeros((3, 7), dtype=np.float32)),
                              [E.SEGMENT_QUESTION] * 3)
    with pytest.raises(T.ShapeError):
        E.nll(model, bad, np.array([0]))


def test_nll_gradient_wrt_plan_rows_matches_fd():
    model = E.AutoregressiveLM(6, dim=8, n_layers=1, n_heads=2, max_len=16,
                               rng=np.random.default_rng(7), dtype=np.float64)
    rng = np.random.default_rng(11)
    plan = rng.normal(size=(3, 8))
    answer = np.array([2, 4])

    def loss_at(x):
        rows = T.Tensor(x, dtype=np.float64)
        prefix = E.EmbeddingSequence(rows, [E.SEGMENT_PLAN] * 3)
        return E.nll(model, prefix, answer).item()

    rows = T.Tensor(plan, dtype=np.float64, requires_grad=True)
    prefix = E.EmbeddingSequence(rows, [E.SEGMENT_PLAN] * 3)
    with T.tape():
        loss = E.nll(model, prefix, answer)
        T.backward(loss)
    assert_grad_close(rows.grad, numeric_gradient(loss_at, plan))


def test_frozen_model_receives_no_grads():
    model = uniform_logit_model()
    model.set_frozen(True)
    rows = T.Tensor(np.random.default_rng(0).normal(size=(3, 16)).astype(np.float32),
                    requires_grad=True)
    prefix = E.EmbeddingSequence(rows, [E.SEGMENT_PLAN] * 3)
    with T.tape():
        loss = E.nll(model, prefix, np.array([0, 2]))
        T.backward(loss)
    assert rows.grad is not None
    for _, p in model.core.params():
        assert p.grad is None


# -- decoding -----------------------------------------------------------------------


def test_greedy_decode_deterministic_and_budgeted():
    model = E.AutoregressiveLM(9, dim=16, n_layers=1, n_heads=2, max_len=32,
                               rng=np.random.default_rng(3))
    prefix = random_prefix(model, length=5, seed=4)
    a, na = E.greedy_decode(model, prefix, 6)
    b, nb = E.greedy_decode(model, prefix, 6)
    np.testing.assert_array_equal(a, b)
    assert na == nb <= 6
    one, n1 = E.greedy_decode(model, prefix, 1)
    assert n1 == 1 and len(one) == 1


def test_causality_witness():
    model = E.AutoregressiveLM(9, dim=16, n_layers=2, n_heads=2, max_len=32,
                               rng=np.random.default_rng(5))
    rng = np.random.default_rng(6)
    base = rng.normal(size=(6, 16)).astype(np.float32)
    changed = base.copy()
    changed[4] += 1.0
    with T.no_grad():
        la = model.core.logits(model.core.forward_rows(T.Tensor(base))).numpy()
        lb = model.core.logits(model.core.forward_rows(T.Tensor(changed))).numpy()
    np.testing.assert_array_equal(la[:4], lb[:4])
    assert not np.allclose(la[4:], lb[4:])


def test_copy_task_decode(copy_executor, digit_vocab):
    prefix = copy_executor.prefix_sequence(None, digit_vocab.encode("7 3 9 →"))
    ids, count = E.greedy_decode(copy_executor, prefix, 8)
    assert digit_vocab.decode(ids, strict=False) == "7 3 9"
    assert count <= 8
    assert ids[-1] == EOS


# -- LoRA ---------------------------------------------------------------------------


def test_lora_zero_init_is_identity():
    model = E.AutoregressiveLM(9, dim=16, n_layers=2, n_heads=2, max_len=32,
                               rng=np.random.default_rng(8))
    adapter = E.LoraAdapter.for_model(model, rank=4, alpha=16.0,
                                      rng=np.random.default_rng(9))
    adapted = E.apply_lora(model, adapter)
    ids = np.array([6, 7, 8, 6], dtype=np.int64)
    with T.no_grad():
        base = model.core.logits(model.core.forward_tokens(ids)).numpy()
        via = adapted.core.logits(adapted.core.forward_tokens(ids)).numpy()
    assert base.tobytes() == via.tobytes()


def test_lora_nll_agrees_bitwise_at_zero_b():
    model = uniform_logit_model(vocab_size=6, dim=16)
    adapter = E.LoraAdapter.for_model(model, rank=2, alpha=8.0)
    adapted = E.apply_lora(model, adapter)
    prefix = random_prefix(model, length=4, seed=12)
    answer = np.array([0, 2])
    assert E.nll(model, prefix, answer).item() == E.nll(adapted, prefix, answer).item()


def test_lora_training_touches_only_adapters():
    model = E.AutoregressiveLM(9, dim=16, n_layers=1, n_heads=2, max_len=32,
                               rng=np.random.default_rng(10))
    model.set_frozen(True)
    before = {n: p.data.copy() for n, p in model.core.params()}
    adapter = E.LoraAdapter.for_model(model, rank=2, alpha=8.0,
                                      rng=np.random.default_rng(11))
    adapted = E.apply_lora(model, adapter)
    from latentlink.optim import AdamW

    opt = AdamW(params=adapter.params(), peak_lr=1e-2, warmup_steps=0, total_steps=100)
    ids = np.array([6, 7, 8, 6, 7], dtype=np.int64)
    for _ in range(5):
        with T.tape():
            hidden = adapted.core.forward_tokens(ids[:-1])
            loss = T.softmax_cross_entropy(adapted.core.logits(hidden), ids[1:])
            T.backward(loss)
        opt.step()
        opt.zero_grad()
    for name, p in model.core.params():
        assert p.data.tobytes() == before[name].tobytes(), name
    assert any(not np.allclose(b.data, 0.0) for _, b in adapter.pairs.values())


def test_lora_full_rank_represents_any_delta():
    dim = 8
    model = E.AutoregressiveLM(9, dim=dim, n_layers=1, n_heads=2, max_len=16,
                               rng=np.random.default_rng(13))
    adapter = E.LoraAdapter.for_model(model, rank=dim, alpha=float(dim))
    rng = np.random.default_rng(14)
    delta = rng.normal(size=(dim, dim)).astype(np.float32) * 0.1
    name = "blocks.0.attn.wq"
    a, b = adapter.pairs[name]
    a.data = np.eye(dim, dtype=np.float32)   # with alpha/r = 1, B A = delta exactly
    b.data = delta.copy()
    adapted = E.apply_lora(model, adapter)
    ids = np.array([6, 7, 8], dtype=np.int64)
    with T.no_grad():
        via_adapter = adapted.core.logits(adapted.core.forward_tokens(ids)).numpy()
    original = model.core.blocks[0].attn.wq.w.data.copy()
    model.core.blocks[0].attn.wq.w.data = original + delta.T
    with T.no_grad():
        via_weights = model.core.logits(model.core.forward_tokens(ids)).numpy()
    model.core.blocks[0].attn.wq.w.data = original
    np.testing.assert_allclose(via_adapter, via_weights, atol=1e-5)


def test_lora_shape_mismatch_rejected():
    model = E.AutoregressiveLM(9, dim=16, n_layers=1, n_heads=2, max_len=16,
                               rng=np.random.default_rng(15))
    adapter = E.LoraAdapter.for_model(model, rank=2, alpha=4.0)
    a, b = adapter.pairs["blocks.0.ffn_in"]
    adapter.pairs["blocks.0.ffn_in"] = (T.Tensor(np.zeros((2, 5), dtype=np.float32)), b)
    with pytest.raises(T.ContractError):
        E.apply_lora(model, adapter)
