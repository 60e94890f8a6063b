"""Token-sequence layouts shared by the planner and executor.

Both agents see the same structural geometry so that a projector can swap the
plan transmission path without moving anything else:

  planner / diffusion model:   q [SEP] plan(W_p, padded) [SEP] answer(W_a, padded)
  executor, answering:         plan(W_p, padded) [SEP] q [SEP] answer [EOS]
  executor, planning:          '>' q [SEP] plan [EOS]

Plan regions have a fixed width: shorter plans are PAD-padded, longer plans
are truncated. That truncation is the text-space information bottleneck this
package studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import EOS, PAD, SEP, Vocabulary

PLAN_MODE_PREFIX = ">"


@dataclass(frozen=True)
class SequenceLayout:
    """Fixed widths for the plan and answer regions."""

    plan_width: int
    answer_width: int

    def __post_init__(self):
        if self.plan_width <= 0 or self.answer_width <= 0:
            raise ValueError("layout widths must be positive")


def pad_region(ids: np.ndarray, width: int) -> np.ndarray:
    """Truncate or PAD-pad a token region to a fixed width."""
    ids = np.asarray(ids, dtype=np.int64)[:width]
    if len(ids) < width:
        ids = np.concatenate([ids, np.full(width - len(ids), PAD, dtype=np.int64)])
    return ids


def planner_sequence(vocab: Vocabulary, question: str, plan: str, answer: str,
                     layout: SequenceLayout) -> np.ndarray:
    """Full training sequence for the diffusion model."""
    return np.concatenate([
        vocab.encode(question),
        [SEP],
        pad_region(vocab.encode(plan), layout.plan_width),
        [SEP],
        pad_region(np.concatenate([vocab.encode(answer), [EOS]]), layout.answer_width),
    ]).astype(np.int64)


def planner_prompt(vocab: Vocabulary, question: str) -> np.ndarray:
    """Conditioning prefix for plan sampling: question plus separator."""
    return np.concatenate([vocab.encode(question), [SEP]]).astype(np.int64)


def executor_answer_sequence(vocab: Vocabulary, plan: str, question: str, answer: str,
                             layout: SequenceLayout) -> tuple[np.ndarray, np.ndarray]:
    """Answering-format tokens plus a next-token loss mask over answer+EOS."""
    prefix = executor_prefix_tokens(vocab, plan, question, layout)
    target = np.concatenate([vocab.encode(answer), [EOS]]).astype(np.int64)
    ids = np.concatenate([prefix, target])
    loss_mask = np.zeros(len(ids), dtype=bool)
    loss_mask[len(prefix):] = True
    return ids, loss_mask


def executor_prefix_tokens(vocab: Vocabulary, plan: str, question: str,
                           layout: SequenceLayout) -> np.ndarray:
    """Decoding prefix: fixed-width plan region, then the question."""
    return np.concatenate([
        pad_region(vocab.encode(plan), layout.plan_width),
        [SEP],
        vocab.encode(question),
        [SEP],
    ]).astype(np.int64)


def executor_plangen_sequence(vocab: Vocabulary, question: str,
                              plan: str) -> tuple[np.ndarray, np.ndarray]:
    """Plan-generation-format tokens plus a loss mask over plan+EOS."""
    prefix = executor_plangen_prompt(vocab, question)
    target = np.concatenate([vocab.encode(plan), [EOS]]).astype(np.int64)
    ids = np.concatenate([prefix, target])
    loss_mask = np.zeros(len(ids), dtype=bool)
    loss_mask[len(prefix):] = True
    return ids, loss_mask


def executor_plangen_prompt(vocab: Vocabulary, question: str) -> np.ndarray:
    return np.concatenate([
        vocab.encode(PLAN_MODE_PREFIX), vocab.encode(question), [SEP],
    ]).astype(np.int64)


def corpus_charset() -> str:
    """Characters any synthetic-family corpus may need, tokenizer-side."""
    return "0123456789ABCDEFGHIJ=;?()+* mod" + PLAN_MODE_PREFIX + "|"
