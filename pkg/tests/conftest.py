"""Shared fixtures: tiny vocabularies and small converged training runs."""

import numpy as np
import pytest

from latentlink.executor import AutoregressiveLM, train_lm
from latentlink.optim import AdamW
from latentlink.planner import DiffusionLM, train_diffusion_model
from latentlink.seeding import substream
from latentlink.vocab import EOS, SEP, Vocabulary


@pytest.fixture(scope="session")
def digit_vocab():
    return Vocabulary.from_texts(["0123456789 →"])


def _digit_strings(rng, n, length=6):
    return ["".join(str(d) for d in rng.integers(0, 10, size=length)) for _ in range(n)]


@pytest.fixture(scope="session")
def copy_planner(digit_vocab):
    """Diffusion model trained to copy the prompt into the plan region."""
    v = digit_vocab
    rng = substream(1234, "copy-planner-data")
    sequences = []
    for text in _digit_strings(rng, 260):
        ids = v.encode(text)
        sequences.append(np.concatenate([ids, [SEP], ids]).astype(np.int64))
    model = DiffusionLM(v.size, dim=32, n_layers=2, n_heads=4, max_len=32,
                        rng=substream(1234, "copy-planner-init"))
    opt = AdamW(params=model.core.param_tensors(), peak_lr=2e-3, warmup_steps=30,
                total_steps=2000, weight_decay=0.0)
    train_diffusion_model(model, sequences, epochs=26, batch_size=16, optimizer=opt,
                          seed=1234, stream="copy-planner")
    return model


@pytest.fixture(scope="session")
def copy_executor(digit_vocab):
    """AR model trained to echo a space-separated digit triple after an arrow."""
    v = digit_vocab
    rng = substream(77, "copy-executor-data")
    corpus = []
    triples = {"7 3 9"}
    while len(triples) < 240:
        triples.add(" ".join(str(d) for d in rng.integers(0, 10, size=3)))
    for text in sorted(triples):
        ids = np.concatenate([v.encode(text + " →"), v.encode(text), [EOS]]).astype(np.int64)
        mask = np.zeros(len(ids), dtype=bool)
        mask[len(text) + 2:] = True
        corpus.append((ids, mask))
    model = AutoregressiveLM(v.size, dim=32, n_layers=2, n_heads=4, max_len=32,
                             rng=substream(77, "copy-executor-init"))
    opt = AdamW(params=model.core.param_tensors(), peak_lr=2e-3, warmup_steps=30,
                total_steps=2000, weight_decay=0.0)
    train_lm(model, corpus, epochs=22, batch_size=16, optimizer=opt, seed=77,
             stream="copy-executor")
    return model
