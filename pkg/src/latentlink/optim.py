"""Decoupled-weight-decay adaptive-moment optimizer with warmup + cosine decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


def warmup_cosine_lr(step: int, peak_lr: float, warmup_steps: int, total_steps: int,
                     min_lr: float = 0.0) -> float:
    """Learning rate as a pure function of the step count.

    Linear ramp from 0 at step 0 to ``peak_lr`` at ``warmup_steps``, then a
    cosine decay that reaches ``min_lr`` at ``total_steps``. Steps beyond the
    horizon stay at ``min_lr``.
    """
    if warmup_steps < 0 or total_steps <= 0:
        raise ContractError("schedule needs warmup_steps >= 0 and total_steps > 0")
    if step < warmup_steps:
        return peak_lr * step / max(warmup_steps, 1)
    if step >= total_steps:
        return min_lr
    span = max(total_steps - warmup_steps, 1)
    frac = (step - warmup_steps) / span
    return min_lr + (peak_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamW:
    """AdamW over a fixed, ordered parameter list.

    Moment buffers are keyed by position, so the update order (and therefore
    the bit pattern of the result) is reproducible. ``state_arrays`` exposes
    everything needed to checkpoint and resume a run bitwise.
    """

    params: list[Tensor]
    peak_lr: float = 5e-4
    weight_decay: float = 1e-3
    warmup_steps: int = 300
    total_steps: int = 10_000
    min_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def lr_at(self, step: int) -> float:
        return warmup_cosine_lr(step, self.peak_lr, self.warmup_steps,
                                self.total_steps, self.min_lr)

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the lr used."""
        self.step_count += 1
        lr = self.lr_at(self.step_count)
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"opt.step": np.array([self.step_count], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"opt.m.{i}"] = m
            out[f"opt.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["opt.step"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"opt.m.{i}"], copy=True)
            self.v[i] = np.array(arrays[f"opt.v.{i}"], copy=True)
