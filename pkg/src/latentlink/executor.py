"""Causal transformer executor: teacher-forced likelihood over an embedding
prefix, greedy decoding, and optional low-rank adapters on the attention and
FFN projections.

The executor consumes *embedding rows*, not just token ids, so a projected
latent plan can stand in for the plan text's embeddings with everything else
unchanged.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import AdamW
from .seeding import substream
from .tensor import ContractError, ShapeError, Tensor
from .transformer import Linear, TransformerCore, init_uniform
from .vocab import EOS

SEGMENT_PLAN = "plan"
SEGMENT_QUESTION = "question"

LORA_TARGET_SUFFIXES = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn_in", "ffn_out")


@dataclass
class EmbeddingSequence:
    """Input rows for the executor, each labelled plan or question."""

    rows: Tensor
    segments: list[str]

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ShapeError("embedding sequence must be a (length, dim) matrix")
        if len(self.segments) != self.rows.shape[0]:
            raise ShapeError("one segment label per row required")
        seen_question = False
        for seg in self.segments:
            if seg not in (SEGMENT_PLAN, SEGMENT_QUESTION):
                raise ContractError(f"unknown segment label {seg!r}")
            if seg == SEGMENT_QUESTION:
                seen_question = True
            elif seen_question:
                raise ContractError("plan rows must precede question rows")

    def __len__(self) -> int:
        return self.rows.shape[0]


class AutoregressiveLM:
    """Strictly causal transformer LM."""

    def __init__(self, vocab_size: int, dim: int = 32, n_layers: int = 2,
                 n_heads: int = 4, max_len: int = 128,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.core = TransformerCore(vocab_size, dim, n_layers, n_heads, max_len,
                                    causal=True, rng=rng, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.core.dim

    def set_frozen(self, frozen: bool) -> None:
        self.core.set_frozen(frozen)

    def embed(self, ids: np.ndarray) -> Tensor:
        return self.core.embed_tokens(np.asarray(ids, dtype=np.int64))

    def prefix_sequence(self, plan_rows: Tensor | None, question_ids: np.ndarray) -> EmbeddingSequence:
        """Assemble [plan rows; embedded question tokens]."""
        q_rows = self.embed(question_ids)
        if plan_rows is None:
            return EmbeddingSequence(q_rows, [SEGMENT_QUESTION] * q_rows.shape[0])
        rows = T.concat([plan_rows, q_rows], axis=0)
        segments = [SEGMENT_PLAN] * plan_rows.shape[0] + [SEGMENT_QUESTION] * q_rows.shape[0]
        return EmbeddingSequence(rows, segments)


def nll(model: AutoregressiveLM, prefix: EmbeddingSequence, answer: np.ndarray) -> Tensor:
    """Teacher-forced -log p(answer | prefix), summed over answer tokens.

    Differentiable with respect to the prefix rows, which is the gradient
    path that trains a projector through a frozen executor.
    """
    answer = np.asarray(answer, dtype=np.int64)
    if answer.size == 0:
        raise ContractError("answer must be non-empty")
    if prefix.rows.shape[1] != model.dim:
        raise ShapeError(f"prefix width {prefix.rows.shape[1]} != executor dim {model.dim}")
    rows = T.concat([prefix.rows, model.embed(answer)], axis=0)
    hidden = model.core.forward_rows(rows)
    logits = model.core.logits(hidden)
    p = len(prefix)
    pred = T.narrow(logits, 0, p - 1, answer.size)
    return T.softmax_cross_entropy(pred, answer)


def greedy_decode(model: AutoregressiveLM, prefix: EmbeddingSequence,
                  max_new_tokens: int) -> tuple[np.ndarray, int]:
    """Argmax decoding from an embedding prefix.

    Returns the emitted token ids (including a terminating EOS if one was
    produced) and the number of decode steps taken.
    """
    if max_new_tokens <= 0:
        raise ContractError("max_new_tokens must be positive")
    emitted: list[int] = []
    with T.no_grad():
        rows = prefix.rows
        for _ in range(max_new_tokens):
            hidden = model.core.forward_rows(rows)
            last = T.narrow(hidden, 0, rows.shape[0] - 1, 1)
            logits = model.core.logits(last).numpy()[0]
            token = int(logits.argmax())
            emitted.append(token)
            if token == EOS:
                break
            rows = T.concat([rows, model.embed(np.array([token]))], axis=0)
    return np.asarray(emitted, dtype=np.int64), len(emitted)


# -- low-rank adapters ---------------------------------------------------------


@dataclass
class LoraAdapter:
    """Per-target low-rank pairs; B starts at zero so adaptation is a no-op."""

    rank: int
    alpha: float
    pairs: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def for_model(cls, model: AutoregressiveLM, rank: int = 8, alpha: float = 32.0,
                  rng: np.random.Generator | None = None) -> "LoraAdapter":
        rng = rng if rng is not None else np.random.default_rng(0)
        adapter = cls(rank=rank, alpha=alpha)
        dtype = model.core.dtype
        for name, lin in _lora_targets(model):
            a = Tensor(init_uniform(rng, (rank, lin.d_in), lin.d_in, dtype), requires_grad=True)
            b = Tensor(np.zeros((lin.d_out, rank), dtype=dtype), requires_grad=True)
            adapter.pairs[name] = (a, b)
        return adapter

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for a, b in self.pairs.values():
            out.extend((a, b))
        return out

    def state_arrays(self, prefix: str = "lora.") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, (a, b) in self.pairs.items():
            out[f"{prefix}{name}.a"] = a.data
            out[f"{prefix}{name}.b"] = b.data
        return out


def _lora_targets(model: AutoregressiveLM) -> list[tuple[str, Linear]]:
    targets = []
    for i, block in enumerate(model.core.blocks):
        targets.append((f"blocks.{i}.attn.wq", block.attn.wq))
        targets.append((f"blocks.{i}.attn.wk", block.attn.wk))
        targets.append((f"blocks.{i}.attn.wv", block.attn.wv))
        targets.append((f"blocks.{i}.attn.wo", block.attn.wo))
        targets.append((f"blocks.{i}.ffn_in", block.ffn_in))
        targets.append((f"blocks.{i}.ffn_out", block.ffn_out))
    return targets


def apply_lora(model: AutoregressiveLM, adapter: LoraAdapter) -> AutoregressiveLM:
    """Adapted view sharing every base tensor; the base weights stay untouched."""
    for name, lin in _lora_targets(model):
        a, b = adapter.pairs[name]
        if a.shape != (adapter.rank, lin.d_in) or b.shape != (lin.d_out, adapter.rank):
            raise ContractError(f"adapter shapes for {name} do not match the target matrix")
    view = copy.copy(model)
    view.core = copy.copy(model.core)
    view.core.blocks = []
    for i, block in enumerate(model.core.blocks):
        nb = copy.copy(block)
        nb.attn = copy.copy(block.attn)
        nb.attn.wq = block.attn.wq.adapted_view(*adapter.pairs[f"blocks.{i}.attn.wq"], adapter.scale)
        nb.attn.wk = block.attn.wk.adapted_view(*adapter.pairs[f"blocks.{i}.attn.wk"], adapter.scale)
        nb.attn.wv = block.attn.wv.adapted_view(*adapter.pairs[f"blocks.{i}.attn.wv"], adapter.scale)
        nb.attn.wo = block.attn.wo.adapted_view(*adapter.pairs[f"blocks.{i}.attn.wo"], adapter.scale)
        nb.ffn_in = block.ffn_in.adapted_view(*adapter.pairs[f"blocks.{i}.ffn_in"], adapter.scale)
        nb.ffn_out = block.ffn_out.adapted_view(*adapter.pairs[f"blocks.{i}.ffn_out"], adapter.scale)
        view.core.blocks.append(nb)
    return view


def train_lm(model: AutoregressiveLM, corpus: list[tuple[np.ndarray, np.ndarray]], *,
             epochs: int, batch_size: int, optimizer: AdamW, seed: int,
             stream: str = "executor") -> list[float]:
    """Next-token NLL over (token ids, loss mask) pairs; per-epoch mean loss."""
    if not corpus:
        raise ContractError("empty training corpus")
    curve: list[float] = []
    for epoch in range(epochs):
        order = substream(seed, f"{stream}/order/{epoch}").permutation(len(corpus))
        total = 0.0
        for lo in range(0, len(order), batch_size):
            chunk = order[lo:lo + batch_size]
            with T.tape():
                batch_loss = None
                for i in chunk:
                    ids, mask = corpus[i]
                    hidden = model.core.forward_tokens(ids[:-1])
                    logits = model.core.logits(hidden)
                    loss = T.softmax_cross_entropy(logits, ids[1:], mask[1:])
                    total += loss.item()
                    batch_loss = loss if batch_loss is None else T.add(batch_loss, loss)
                batch_loss = batch_loss * (1.0 / len(chunk))
                T.backward(batch_loss)
            optimizer.step()
            optimizer.zero_grad()
        curve.append(total / len(corpus))
    return curve
