"""Trainable bridge from planner hidden space to executor embedding space.

A bottleneck MLP (three linear layers, two GELUs, final RMS norm) is applied
row-wise to a latent plan. It is trained through the *frozen* executor by
minimizing the negative log-likelihood of the gold answer given the projected
plan and the embedded question; gradients flow through the executor into the
projector only. A geometric alignment objective (mean squared distance to the
embeddings of the decoded plan text) is provided purely as an ablation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoding import pad_region, planner_prompt
from .executor import (AutoregressiveLM, LoraAdapter, apply_lora, greedy_decode,
                       nll)
from .optim import AdamW
from .planner import DiffusionLM, LatentPlan, UnmaskingSchedule, extract_latent, sample
from .seeding import substream
from .tensor import ContractError, ShapeError, Tensor
from .transformer import Linear
from .vocab import EOS, SEP, Vocabulary


@dataclass
class TrainConfig:
    """Projector-training hyperparameters."""

    epochs: int = 10
    batch_size: int = 4
    grad_accum: int = 2
    plan_length: int = 6
    seed: int = 0
    precision: str = "float32"
    lora_enabled: bool = False
    lora_rank: int = 8
    lora_alpha: float = 32.0
    peak_lr: float = 5e-4
    weight_decay: float = 1e-3
    warmup_steps: int = 300
    min_lr: float = 0.0

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accum

    @property
    def dtype(self):
        if self.precision not in ("float32", "float64"):
            raise ContractError(f"unknown precision {self.precision!r}")
        return np.float32 if self.precision == "float32" else np.float64


class Projector:
    """Row-wise map: d_in -> bottleneck -> GELU -> mid -> GELU -> d_out -> RMS norm."""

    NORM_EPS = 1e-5

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 dtype=np.float32, bottleneck: int | None = None, mid: int | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in = d_in
        self.d_out = d_out
        self.bottleneck = bottleneck if bottleneck is not None else max(d_in // 4, 4)
        self.mid = mid if mid is not None else 2 * d_out
        self.dtype = np.dtype(dtype)
        self.l1 = Linear(d_in, self.bottleneck, rng, self.dtype)
        self.l2 = Linear(self.bottleneck, self.mid, rng, self.dtype)
        self.l3 = Linear(self.mid, d_out, rng, self.dtype)
        self.gain = Tensor(np.ones(d_out, dtype=self.dtype), requires_grad=True)

    def __call__(self, rows: Tensor) -> Tensor:
        h = T.gelu(self.l1(rows))
        h = T.gelu(self.l2(h))
        return T.rmsnorm(self.l3(h), self.gain, self.NORM_EPS)

    def params(self) -> list[tuple[str, Tensor]]:
        out = self.l1.params("proj.l1") + self.l2.params("proj.l2") + self.l3.params("proj.l3")
        out.append(("proj.gain", self.gain))
        return out

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.params()]

    @property
    def param_count(self) -> int:
        return sum(t.size for _, t in self.params())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params():
            src = arrays[name]
            if src.shape != t.shape:
                raise ShapeError(f"projector entry {name} has shape {src.shape}, expected {t.shape}")
            t.data = np.ascontiguousarray(src.astype(self.dtype))


def project(projector: Projector, plan: LatentPlan | np.ndarray) -> Tensor:
    """Apply the projector row-wise to a latent plan."""
    states = plan.states if isinstance(plan, LatentPlan) else np.asarray(plan)
    if states.ndim != 2 or states.shape[1] != projector.d_in:
        raise ShapeError(f"plan width {states.shape} does not match projector input "
                         f"{projector.d_in}")
    return projector(Tensor(states.astype(projector.dtype)))


# -- latent extraction shared by training and inference ----------------------


def plan_latents(planner: DiffusionLM, vocab: Vocabulary, question: str,
                 plan_length: int, schedule: UnmaskingSchedule) -> tuple[LatentPlan, np.ndarray]:
    """Run the planner on a question; return latents and the committed plan ids."""
    prompt = planner_prompt(vocab, question)
    final_state = sample(planner, prompt, plan_length, schedule)
    latent = extract_latent(planner, final_state, plan_length)
    return latent, final_state[len(prompt):]


def executor_suffix_ids(vocab: Vocabulary, question: str) -> np.ndarray:
    """Token ids the executor sees after the plan region: [SEP] q [SEP]."""
    return np.concatenate([[SEP], vocab.encode(question), [SEP]]).astype(np.int64)


def answer_target_ids(vocab: Vocabulary, answer: str) -> np.ndarray:
    return np.concatenate([vocab.encode(answer), [EOS]]).astype(np.int64)


# -- training ------------------------------------------------------------------


@dataclass
class ProjectorTrainResult:
    epoch_losses: list[float]
    optimizer: AdamW
    adapter: LoraAdapter | None = None
    objective: str = "task-nll"
    latent_cache: dict[str, tuple[LatentPlan, np.ndarray]] = field(default_factory=dict)


def build_latent_cache(planner, vocab, dataset, plan_length, schedule,
                       cache: dict[str, tuple[LatentPlan, np.ndarray]] | None = None,
                       ) -> dict[str, tuple[LatentPlan, np.ndarray]]:
    """Planner latents and committed plan ids per question (planner is frozen,
    so one pass per distinct question is semantically identical to re-running
    it every epoch)."""
    cache = dict(cache) if cache else {}
    for s in dataset:
        if s.question not in cache:
            cache[s.question] = plan_latents(planner, vocab, s.question, plan_length, schedule)
    return cache


def train_projector(planner: DiffusionLM, executor: AutoregressiveLM,
                    projector: Projector, dataset, cfg: TrainConfig, *,
                    vocab: Vocabulary, schedule: UnmaskingSchedule | None = None,
                    optimizer: AdamW | None = None, start_epoch: int = 0,
                    latent_cache: dict[str, tuple[LatentPlan, np.ndarray]] | None = None,
                    objective: str = "task-nll") -> ProjectorTrainResult:
    """Optimize the projector through the frozen planner/executor pair.

    Per sample: plan latents -> projected rows -> concatenation with the
    embedded question -> answer NLL, averaged over the effective batch, with
    warmup + cosine learning-rate scheduling. With ``lora_enabled`` the
    executor additionally receives low-rank adapters trained jointly; its base
    weights stay frozen either way.
    """
    if len(dataset) == 0:
        raise ContractError("projector training needs a non-empty dataset")
    if not planner.core.frozen or not executor.core.frozen:
        raise ContractError("planner and executor must be frozen for projector training")
    if objective not in ("task-nll", "mse-align"):
        raise ContractError(f"unknown objective {objective!r}")
    schedule = schedule or UnmaskingSchedule.default_for(cfg.plan_length)

    trainable = projector.param_tensors()
    adapter = None
    exec_view = executor
    if cfg.lora_enabled:
        adapter = LoraAdapter.for_model(executor, rank=cfg.lora_rank, alpha=cfg.lora_alpha,
                                        rng=substream(cfg.seed, "lora-init"))
        exec_view = apply_lora(executor, adapter)
        trainable = trainable + adapter.params()

    samples = list(dataset)
    steps_per_epoch = int(np.ceil(len(samples) / cfg.effective_batch))
    if optimizer is None:
        optimizer = AdamW(params=trainable, peak_lr=cfg.peak_lr,
                          weight_decay=cfg.weight_decay, warmup_steps=cfg.warmup_steps,
                          total_steps=max((start_epoch + cfg.epochs) * steps_per_epoch, 1),
                          min_lr=cfg.min_lr)

    cache = build_latent_cache(planner, vocab, samples, cfg.plan_length, schedule,
                               latent_cache)
    mse_targets: dict[str, np.ndarray] = {}
    if objective == "mse-align":
        for s in samples:
            _, plan_ids = cache[s.question]
            mse_targets[s.question] = decoded_plan_embedding_target(
                executor, vocab, plan_ids, cfg.plan_length)

    losses: list[float] = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        order = substream(cfg.seed, f"projector/order/{epoch}").permutation(len(samples))
        total = 0.0
        micro = 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = order[lo:lo + cfg.batch_size]
            with T.tape():
                batch_loss = None
                for i in chunk:
                    s = samples[i]
                    latent, _ = cache[s.question]
                    rows = project(projector, latent)
                    if objective == "task-nll":
                        prefix = exec_view.prefix_sequence(rows, executor_suffix_ids(vocab, s.question))
                        loss = nll(exec_view, prefix, answer_target_ids(vocab, s.answer))
                    else:
                        target = Tensor(mse_targets[s.question].astype(projector.dtype))
                        diff = T.sub(rows, target)
                        loss = T.tsum(T.mul(diff, diff))
                    total += loss.item()
                    loss = loss * (1.0 / cfg.effective_batch)
                    batch_loss = loss if batch_loss is None else T.add(batch_loss, loss)
                T.backward(batch_loss)
            micro += 1
            if micro % cfg.grad_accum == 0 or lo + cfg.batch_size >= len(order):
                optimizer.step()
                optimizer.zero_grad()
        losses.append(total / len(samples))
    return ProjectorTrainResult(epoch_losses=losses, optimizer=optimizer, adapter=adapter,
                                objective=objective, latent_cache=cache)


# -- the rejected geometric objective (ablation) --------------------------------


def decoded_plan_embedding_target(executor: AutoregressiveLM, vocab: Vocabulary,
                                  plan_ids: np.ndarray, plan_length: int) -> np.ndarray:
    """Executor-space target rows: embeddings of the decoded plan text.

    This is the text-space route (decode, then re-encode with the executor's
    own table), materialized as a fixed regression target.
    """
    text = vocab.decode(plan_ids, strict=False)
    reencoded = pad_region(vocab.encode(text), plan_length)
    with T.no_grad():
        return np.array(executor.embed(reencoded).numpy(), copy=True)


def mse_align_loss(projector: Projector, plans: list[LatentPlan | np.ndarray],
                   targets: list[np.ndarray]) -> Tensor:
    """Mean over samples of the squared distance to the target rows."""
    if len(plans) != len(targets):
        raise ShapeError("one target per plan required")
    total = None
    for plan, target in zip(plans, targets):
        rows = project(projector, plan)
        target = np.asarray(target, dtype=projector.dtype)
        if target.shape != tuple(rows.shape):
            raise ShapeError(f"target shape {target.shape} != projected shape {rows.shape}")
        diff = T.sub(rows, Tensor(target))
        sq = T.tsum(T.mul(diff, diff))
        total = sq if total is None else T.add(total, sq)
    return total * (1.0 / len(plans))


# -- inference (latent interface) ------------------------------------------------


@dataclass
class LatentInference:
    answer_text: str
    planner_tokens: int
    executor_tokens: int
    wall_time_ms: float


def infer_latent(planner: DiffusionLM, projector: Projector, executor: AutoregressiveLM,
                 question: str, *, vocab: Vocabulary, plan_length: int,
                 schedule: UnmaskingSchedule | None = None,
                 max_new_tokens: int = 8) -> LatentInference:
    """Latent-interface inference: plan latents -> projector -> executor decode."""
    started = time.perf_counter()
    schedule = schedule or UnmaskingSchedule.default_for(plan_length)
    latent, _ = plan_latents(planner, vocab, question, plan_length, schedule)
    with T.no_grad():
        rows = project(projector, latent)
    prefix = executor.prefix_sequence(rows, executor_suffix_ids(vocab, question))
    emitted, count = greedy_decode(executor, prefix, max_new_tokens)
    answer = vocab.decode(emitted, strict=False)
    return LatentInference(answer_text=answer, planner_tokens=plan_length,
                           executor_tokens=count,
                           wall_time_ms=(time.perf_counter() - started) * 1e3)
