"""Planner-executor pipeline configurations, prompt templating, and scoring.

Five pipelines are supported: executor alone, AR planner with AR executor,
diffusion planner with AR executor over the text interface, the same pair
over the latent interface, and an all-diffusion pair. For fixed models the
text and latent runs differ only in how the plan crosses between the agents;
prompt layout, decode budget, and scoring are identical.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import tensor as T
from .diagnostics import (PIPELINE_ARM_ARM, PIPELINE_ARM_ONLY, PIPELINE_DDLM_ARM_LATENT,
                          PIPELINE_DDLM_ARM_TEXT, PIPELINE_DDLM_DDLM)
from .encoding import (SequenceLayout, executor_plangen_prompt, pad_region,
                       planner_prompt)
from .executor import AutoregressiveLM, greedy_decode
from .planner import DiffusionLM, UnmaskingSchedule, denoise, sample
from .projector import (Projector, executor_suffix_ids, infer_latent)
from .tensor import ContractError
from .vocab import EOS, MASK, SEP, Vocabulary

ANSWER_RULE_VERSION = 1


class TemplateError(ValueError):
    pass


class PipelineConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """One planner-executor wiring."""

    pipeline_id: str
    planner: str          # none | arm | ddlm
    executor: str         # arm | ddlm
    interface: str        # text | latent
    plan_length: int
    planner_template: str = "planner_desk"
    executor_template: str = "executor_desk"
    decode_budget: int = 8

    def __post_init__(self):
        if self.planner not in ("none", "arm", "ddlm"):
            raise PipelineConfigError(f"unknown planner kind {self.planner!r}")
        if self.executor not in ("arm", "ddlm"):
            raise PipelineConfigError(f"unknown executor kind {self.executor!r}")
        if self.interface not in ("text", "latent"):
            raise PipelineConfigError(f"unknown interface {self.interface!r}")
        if self.interface == "latent" and (self.planner, self.executor) != ("ddlm", "arm"):
            raise PipelineConfigError(
                "the latent interface exists only for the diffusion-planner / "
                "AR-executor pairing")


def standard_pipelines(plan_length: int, decode_budget: int = 8) -> dict[str, PipelineConfig]:
    mk = lambda pid, planner, executor, interface: PipelineConfig(  # noqa: E731
        pipeline_id=pid, planner=planner, executor=executor, interface=interface,
        plan_length=plan_length, decode_budget=decode_budget)
    return {
        PIPELINE_ARM_ONLY: mk(PIPELINE_ARM_ONLY, "none", "arm", "text"),
        PIPELINE_ARM_ARM: mk(PIPELINE_ARM_ARM, "arm", "arm", "text"),
        PIPELINE_DDLM_ARM_TEXT: mk(PIPELINE_DDLM_ARM_TEXT, "ddlm", "arm", "text"),
        PIPELINE_DDLM_ARM_LATENT: mk(PIPELINE_DDLM_ARM_LATENT, "ddlm", "arm", "latent"),
        PIPELINE_DDLM_DDLM: mk(PIPELINE_DDLM_DDLM, "ddlm", "ddlm", "text"),
    }


# -- prompt templates ----------------------------------------------------------

_TEMPLATE_CACHE: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in _TEMPLATE_CACHE:
        ref = resources.files("latentlink").joinpath(f"templates/{name}.txt")
        try:
            _TEMPLATE_CACHE[name] = ref.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise TemplateError(f"no template named {name!r}") from exc
    return _TEMPLATE_CACHE[name]


def _fill(template: str, name: str, **values: str) -> str:
    for key in values:
        if "{" + key + "}" not in template:
            raise TemplateError(f"template {name!r} is missing the {{{key}}} placeholder")
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


def render_prompts(question: str, plan_text: str | None = None,
                   planner_template: str = "planner_desk",
                   executor_template: str = "executor_desk") -> tuple[str, str]:
    """Rendered planner and executor prompt texts (pure in its inputs)."""
    planner_text = _fill(load_template(planner_template), planner_template,
                         question=question)
    executor_text = _fill(load_template(executor_template), executor_template,
                          plan=plan_text if plan_text is not None else "",
                          question=question)
    return planner_text, executor_text


# -- answer extraction and scoring ----------------------------------------------

_ANSWER_TAG = re.compile(r"answer\s*[:=]\s*(\S+)", re.IGNORECASE)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def extract_answer(text: str) -> str:
    """Final-answer token: last 'Answer: X' tag, else last number, else the text."""
    tags = _ANSWER_TAG.findall(text)
    if tags:
        return tags[-1]
    numbers = _NUMBER.findall(text)
    if numbers:
        return numbers[-1]
    return text


def normalize_answer(text: str) -> str:
    return text.strip().rstrip(".").lower()


def extract_and_score(answer_text: str, gold: str) -> bool:
    """Exact match of the extracted, normalized answer against the gold string."""
    return normalize_answer(extract_answer(answer_text)) == normalize_answer(gold)


# -- run records -----------------------------------------------------------------


@dataclass
class RunRecord:
    sample_id: str
    pipeline_id: str
    benchmark: str
    plan_text: str
    answer_text: str
    correct: bool
    planner_tokens: int
    executor_tokens: int
    wall_time_ms: float

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "pipeline_id": self.pipeline_id,
            "benchmark": self.benchmark,
            "plan_text": self.plan_text,
            "answer_text": self.answer_text,
            "correct": self.correct,
            "planner_tokens": self.planner_tokens,
            "executor_tokens": self.executor_tokens,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunRecord":
        return cls(**payload)


def save_run_records(records: list[RunRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for r in records:
            handle.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_run_records(path) -> list[RunRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(RunRecord.from_dict(json.loads(line)))
    return records


# -- execution --------------------------------------------------------------------


@dataclass
class PipelineContext:
    """Loaded models plus the shared run settings."""

    vocab: Vocabulary
    layout: SequenceLayout
    executor: AutoregressiveLM
    planner: DiffusionLM | None = None
    projector: Projector | None = None
    schedule_steps: int = 0      # 0 selects the plan_length/4 default
    decode_budget: int = 8
    records: list[RunRecord] = field(default_factory=list)

    def schedule_for(self, length: int) -> UnmaskingSchedule:
        if self.schedule_steps > 0:
            return UnmaskingSchedule.uniform(length, self.schedule_steps)
        return UnmaskingSchedule.default_for(length)


def _plan_text_from(ctx: PipelineContext, planner_kind: str, question: str,
                    plan_length: int) -> tuple[str, int]:
    if planner_kind == "none":
        return "", 0
    if planner_kind == "ddlm":
        if ctx.planner is None:
            raise PipelineConfigError("pipeline needs a diffusion planner checkpoint")
        prompt = planner_prompt(ctx.vocab, question)
        final = sample(ctx.planner, prompt, plan_length, ctx.schedule_for(plan_length))
        plan_ids = final[len(prompt):]
        return ctx.vocab.decode(plan_ids, strict=False), plan_length
    if planner_kind == "arm":
        prompt_ids = executor_plangen_prompt(ctx.vocab, question)
        prefix = ctx.executor.prefix_sequence(None, prompt_ids)
        emitted, count = greedy_decode(ctx.executor, prefix, plan_length)
        return ctx.vocab.decode(emitted, strict=False), count
    raise PipelineConfigError(f"unknown planner kind {planner_kind!r}")


def _arm_execute(ctx: PipelineContext, plan_text: str, question: str) -> tuple[str, int]:
    plan_ids = pad_region(ctx.vocab.encode(plan_text), ctx.layout.plan_width)
    plan_rows = ctx.executor.embed(plan_ids)
    prefix = ctx.executor.prefix_sequence(plan_rows, executor_suffix_ids(ctx.vocab, question))
    emitted, count = greedy_decode(ctx.executor, prefix, ctx.decode_budget)
    return ctx.vocab.decode(emitted, strict=False), count


def _ddlm_execute(ctx: PipelineContext, plan_text: str, question: str) -> tuple[str, int]:
    if ctx.planner is None:
        raise PipelineConfigError("all-diffusion pipeline needs the diffusion checkpoint")
    v, layout = ctx.vocab, ctx.layout
    tokens = np.concatenate([
        v.encode(question), [SEP],
        pad_region(v.encode(plan_text), layout.plan_width), [SEP],
        np.full(layout.answer_width, MASK, dtype=np.int64),
    ]).astype(np.int64)
    schedule = ctx.schedule_for(layout.answer_width)
    final = denoise(ctx.planner, tokens, schedule)
    answer_ids = final[-layout.answer_width:]
    return v.decode(answer_ids, strict=False), layout.answer_width


def run_text_space(ctx: PipelineContext, cfg: PipelineConfig, question: str,
                   gold: str, sample_id: str, benchmark: str = "all") -> RunRecord:
    """Plan as text: decode the planner's tokens, re-encode on the executor side."""
    started = time.perf_counter()
    plan_text, planner_tokens = _plan_text_from(ctx, cfg.planner, question, cfg.plan_length)
    if cfg.executor == "arm":
        answer_text, executor_tokens = _arm_execute(ctx, plan_text, question)
    else:
        answer_text, executor_tokens = _ddlm_execute(ctx, plan_text, question)
    return RunRecord(
        sample_id=sample_id, pipeline_id=cfg.pipeline_id, benchmark=benchmark,
        plan_text=plan_text, answer_text=answer_text,
        correct=extract_and_score(answer_text, gold),
        planner_tokens=planner_tokens, executor_tokens=executor_tokens,
        wall_time_ms=(time.perf_counter() - started) * 1e3)


def run_latent_space(ctx: PipelineContext, cfg: PipelineConfig, question: str,
                     gold: str, sample_id: str, benchmark: str = "all") -> RunRecord:
    """Plan as projected hidden states; no discretization, so no plan text."""
    if ctx.projector is None:
        raise PipelineConfigError("latent pipeline needs a trained projector")
    if ctx.planner is None:
        raise PipelineConfigError("latent pipeline needs the diffusion planner")
    if ctx.projector.d_in != ctx.planner.dim or ctx.projector.d_out != ctx.executor.dim:
        raise PipelineConfigError(
            f"projector ({ctx.projector.d_in}->{ctx.projector.d_out}) does not match "
            f"planner/executor dims ({ctx.planner.dim}, {ctx.executor.dim})")
    started = time.perf_counter()
    result = infer_latent(ctx.planner, ctx.projector, ctx.executor, question,
                          vocab=ctx.vocab, plan_length=cfg.plan_length,
                          schedule=ctx.schedule_for(cfg.plan_length),
                          max_new_tokens=ctx.decode_budget)
    return RunRecord(
        sample_id=sample_id, pipeline_id=cfg.pipeline_id, benchmark=benchmark,
        plan_text="", answer_text=result.answer_text,
        correct=extract_and_score(result.answer_text, gold),
        planner_tokens=result.planner_tokens, executor_tokens=result.executor_tokens,
        wall_time_ms=(time.perf_counter() - started) * 1e3)


def run_pipeline(ctx: PipelineContext, cfg: PipelineConfig, question: str, gold: str,
                 sample_id: str, benchmark: str = "all") -> RunRecord:
    if cfg.interface == "latent":
        return run_latent_space(ctx, cfg, question, gold, sample_id, benchmark)
    return run_text_space(ctx, cfg, question, gold, sample_id, benchmark)


def run_suite(ctx: PipelineContext, configs: list[PipelineConfig], dataset) -> list[RunRecord]:
    """Every configured pipeline over every sample, deterministic order."""
    records: list[RunRecord] = []
    with T.no_grad():
        for cfg in configs:
            for i, s in enumerate(dataset):
                records.append(run_pipeline(ctx, cfg, s.question, s.answer,
                                            sample_id=f"{dataset.split}-{i:04d}",
                                            benchmark=s.family or "all"))
    ctx.records.extend(records)
    return records


def accuracy_by_pipeline(records: list[RunRecord]) -> dict[str, float]:
    totals: dict[str, list[int]] = {}
    for r in records:
        bucket = totals.setdefault(r.pipeline_id, [0, 0])
        bucket[0] += int(r.correct)
        bucket[1] += 1
    return {pid: 100.0 * hit / n for pid, (hit, n) in sorted(totals.items())}
