"""Masked-diffusion language model: forward corruption, training loss,
confidence-ordered iterative unmasking, and latent-plan extraction.

Training draws a mask ratio t ~ Unif[0,1] per sequence, corrupts every
position independently with probability t, and scores -log p(original token)
summed over the corrupted positions. Generation starts from a fully masked
region and commits tokens over several denoising steps; once a position is
committed it is never rewritten (absorbing state).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import AdamW
from .seeding import substream
from .tensor import ContractError, Tensor
from .transformer import TransformerCore
from .vocab import MASK


@dataclass
class MaskedState:
    """A token sequence with some positions replaced by the mask token."""

    tokens: np.ndarray
    mask_positions: np.ndarray
    t: float

    def __post_init__(self):
        if not np.array_equal(self.mask_positions, self.tokens == MASK):
            raise ContractError("mask_positions must mark exactly the MASK tokens")


@dataclass
class UnmaskingSchedule:
    """Number of positions to commit at each denoising step."""

    total_steps: int
    counts: list[int]

    def __post_init__(self):
        if self.total_steps != len(self.counts):
            raise ContractError("total_steps must equal len(counts)")
        if any(c <= 0 for c in self.counts):
            raise ContractError("per-step unmask counts must be positive")

    @property
    def length(self) -> int:
        return sum(self.counts)

    @classmethod
    def uniform(cls, length: int, steps: int) -> "UnmaskingSchedule":
        """Spread ``length`` commits over ``steps``, front-loading remainders."""
        if length <= 0 or steps <= 0:
            raise ContractError("length and steps must be positive")
        steps = min(steps, length)
        counts = []
        remaining = length
        for s in range(steps):
            c = int(np.ceil(remaining / (steps - s)))
            counts.append(c)
            remaining -= c
        return cls(total_steps=steps, counts=counts)

    @classmethod
    def default_for(cls, plan_length: int) -> "UnmaskingSchedule":
        return cls.uniform(plan_length, max(1, plan_length // 4))


class DiffusionLM:
    """Bidirectional transformer trained as a masked denoiser."""

    def __init__(self, vocab_size: int, dim: int = 48, n_layers: int = 2,
                 n_heads: int = 4, max_len: int = 128,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.core = TransformerCore(vocab_size, dim, n_layers, n_heads, max_len,
                                    causal=False, rng=rng, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.core.dim

    def set_frozen(self, frozen: bool) -> None:
        self.core.set_frozen(frozen)

    def logits_for(self, tokens: np.ndarray) -> Tensor:
        return self.core.logits(self.core.forward_tokens(tokens))


@dataclass
class LatentPlan:
    """Last-hidden-layer rows at the plan positions after final denoising."""

    states: np.ndarray
    source_model_id: str = ""

    def __post_init__(self):
        if self.states.ndim != 2:
            raise ContractError("latent plan must be a (plan_length, dim) matrix")
        if not np.isfinite(self.states).all():
            raise ContractError("latent plan contains non-finite entries")

    @property
    def plan_length(self) -> int:
        return self.states.shape[0]


def mask_sequence(x: np.ndarray, t: float, rng: np.random.Generator) -> MaskedState:
    """Corrupt each position independently with probability t."""
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"mask ratio t={t} outside [0, 1]")
    x = np.asarray(x, dtype=np.int64)
    if (x == MASK).any():
        raise ContractError("input sequence already contains MASK tokens")
    hit = rng.random(len(x)) < t
    tokens = np.where(hit, MASK, x)
    return MaskedState(tokens=tokens, mask_positions=hit, t=float(t))


def diffusion_loss(model: DiffusionLM, x: np.ndarray, rng: np.random.Generator) -> Tensor:
    """Single-sequence denoising loss: sum of -log p(x_i | z) over masked i."""
    t = float(rng.uniform())
    state = mask_sequence(x, t, rng)
    if not state.mask_positions.any():
        return Tensor(np.asarray(0.0, dtype=model.core.dtype))
    logits = model.logits_for(state.tokens)
    return T.softmax_cross_entropy(logits, np.asarray(x, dtype=np.int64),
                                   state.mask_positions)


def denoise(model: DiffusionLM, tokens: np.ndarray, schedule: UnmaskingSchedule,
            rng: np.random.Generator | None = None, strategy: str = "argmax",
            trace: list[np.ndarray] | None = None) -> np.ndarray:
    """Fill every MASK position of ``tokens`` over the scheduled steps.

    At each step, logits are computed for all masked positions and the
    scheduled number of positions is committed, picking positions by highest
    model confidence (max softmax probability; ties broken by position).
    Committed positions are never revisited.
    """
    tokens = np.array(tokens, dtype=np.int64, copy=True)
    masked = tokens == MASK
    if int(masked.sum()) != schedule.length:
        raise ContractError(
            f"schedule commits {schedule.length} tokens but {int(masked.sum())} are masked")
    for count in schedule.counts:
        with T.no_grad():
            logits = model.logits_for(tokens).numpy()
        positions = np.flatnonzero(masked)
        rows = logits[positions]
        rows = rows - rows.max(axis=1, keepdims=True)
        probs = np.exp(rows)
        probs /= probs.sum(axis=1, keepdims=True)
        if strategy == "argmax":
            choice = probs.argmax(axis=1)
        elif strategy == "sample":
            if rng is None:
                raise ContractError("sampling strategy needs an rng")
            cum = probs.cumsum(axis=1)
            draws = rng.random(len(positions))
            choice = (cum < draws[:, None]).sum(axis=1)
        else:
            raise ContractError(f"unknown decode strategy {strategy!r}")
        confidence = probs[np.arange(len(positions)), choice]
        order = np.lexsort((positions, -confidence))
        commit = order[:count]
        tokens[positions[commit]] = choice[commit]
        masked[positions[commit]] = False
        if trace is not None:
            trace.append(tokens.copy())
    if masked.any():
        raise ContractError("denoising finished with residual MASK tokens")
    return tokens


def sample(model: DiffusionLM, prompt: np.ndarray, plan_length: int,
           schedule: UnmaskingSchedule, rng: np.random.Generator | None = None,
           strategy: str = "argmax",
           trace: list[np.ndarray] | None = None) -> np.ndarray:
    """Append ``plan_length`` masks after the prompt and denoise them."""
    if plan_length <= 0:
        raise ContractError("plan_length must be positive")
    if schedule.length != plan_length:
        raise ContractError(
            f"schedule counts sum to {schedule.length}, expected {plan_length}")
    prompt = np.asarray(prompt, dtype=np.int64)
    tokens = np.concatenate([prompt, np.full(plan_length, MASK, dtype=np.int64)])
    return denoise(model, tokens, schedule, rng=rng, strategy=strategy, trace=trace)


def extract_latent(model: DiffusionLM, final_state: np.ndarray,
                   plan_length: int, model_id: str = "") -> LatentPlan:
    """One extra forward pass; keep hidden rows at the plan positions only."""
    final_state = np.asarray(final_state, dtype=np.int64)
    if (final_state == MASK).any():
        raise ContractError("residual MASK token in completed sequence")
    if not 0 < plan_length <= len(final_state):
        raise ContractError("plan_length out of range for the completed sequence")
    with T.no_grad():
        hidden = model.core.forward_tokens(final_state).numpy()
    return LatentPlan(states=np.array(hidden[len(final_state) - plan_length:], copy=True),
                      source_model_id=model_id)


def train_diffusion_model(model: DiffusionLM, sequences: list[np.ndarray], *,
                          epochs: int, batch_size: int, optimizer: AdamW,
                          seed: int, stream: str = "planner") -> list[float]:
    """Denoising training over raw token sequences; returns per-epoch mean loss."""
    if not sequences:
        raise ContractError("empty training corpus")
    curve: list[float] = []
    for epoch in range(epochs):
        order = substream(seed, f"{stream}/order/{epoch}").permutation(len(sequences))
        mask_rng = substream(seed, f"{stream}/mask/{epoch}")
        total = 0.0
        seen = 0
        for lo in range(0, len(order), batch_size):
            chunk = order[lo:lo + batch_size]
            with T.tape():
                losses = [diffusion_loss(model, sequences[i], mask_rng) for i in chunk]
                live = [l for l in losses if l.requires_grad]
                total += sum(l.item() for l in losses)
                seen += len(chunk)
                if not live:
                    continue
                batch_loss = live[0]
                for l in live[1:]:
                    batch_loss = T.add(batch_loss, l)
                batch_loss = batch_loss * (1.0 / len(chunk))
                T.backward(batch_loss)
            optimizer.step()
            optimizer.zero_grad()
        curve.append(total / max(seen, 1))
    return curve
