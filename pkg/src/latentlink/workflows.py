"""End-to-end commands: train the two agents, train the projector, evaluate
pipelines, attribute failures, and compute repetition metrics.

Every command is a plain function over an ExperimentConfig so the CLI, the
test suite, and reproduction scripts share one code path. All randomness is
drawn from named substreams of the config seed; outputs are bit-reproducible
for a fixed config.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import tensor as T
from .archive import load_archive, pack_json, save_archive, unpack_json
from .config import ConfigError, ExperimentConfig, NumericalError, config_hash
from .data import Dataset, TaskSample, generate_splits
from .diagnostics import (PIPELINE_DDLM_ARM_LATENT, PIPELINE_DDLM_ARM_TEXT,
                          attribute_failures, render_table)
from .encoding import (SequenceLayout, corpus_charset, executor_answer_sequence,
                       executor_plangen_sequence, planner_sequence)
from .executor import AutoregressiveLM, train_lm
from .metrics import repetition_report
from .optim import AdamW
from .pipelines import (PipelineContext, accuracy_by_pipeline, load_run_records,
                        run_suite, save_run_records, standard_pipelines)
from .planner import DiffusionLM, UnmaskingSchedule, sample, train_diffusion_model
from .projector import Projector, TrainConfig, train_projector
from .seeding import substream
from .vocab import Vocabulary

PLANNER_CKPT = "planner.ldarm"
EXECUTOR_CKPT = "executor.ldarm"
PROJECTOR_CKPT = "projector.ldarm"
RUN_RECORDS = "runrecords.jsonl"
EVAL_TABLE = "eval_table.json"
DIAGNOSTICS = "diagnostics.json"


def build_vocab() -> Vocabulary:
    """Fixed character inventory shared by both agents across all families."""
    return Vocabulary.from_texts([corpus_charset()])


def layout_of(cfg: ExperimentConfig) -> SequenceLayout:
    return SequenceLayout(plan_width=cfg.layout.plan_length,
                          answer_width=cfg.layout.answer_width)


def load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    return generate_splits(cfg.data.family, (cfg.data.train, cfg.data.val, cfg.data.test),
                           cfg.data.seed, **cfg.data.knobs())


def _dtype(cfg: ExperimentConfig):
    return np.float32 if cfg.precision == "float32" else np.float64


def model_hash(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(arrays[name]).tobytes())
    return digest.hexdigest()[:16]


def _check_finite(curve: list[float], stage: str) -> None:
    if any(not math.isfinite(x) for x in curve):
        raise NumericalError(f"non-finite loss during {stage}")


def _write_log(path: Path, curve: list[float]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for epoch, loss in enumerate(curve, start=1):
            handle.write(json.dumps({"epoch": epoch, "mean_loss": loss}) + "\n")


# -- corpora ---------------------------------------------------------------------


def planner_corpus(cfg: ExperimentConfig, vocab: Vocabulary, layout: SequenceLayout,
                   train: Dataset) -> list[np.ndarray]:
    return [planner_sequence(vocab, s.question, s.plan, s.answer, layout) for s in train]


def executor_corpus(cfg: ExperimentConfig, vocab: Vocabulary, layout: SequenceLayout,
                    train: Dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    """Answering-format sequences with a plan-format mixture, plus the
    plan-generation format that backs the AR planner role."""
    rng = substream(cfg.seed, "executor-corpus")
    fracs = cfg.executor_corpus
    corpus: list[tuple[np.ndarray, np.ndarray]] = []
    for s in train:
        draw = rng.random()
        if draw < fracs.full_plan_frac:
            plan = s.plan
        elif draw < fracs.full_plan_frac + fracs.answer_plan_frac:
            plan = s.answer
        else:
            plan = ""
        corpus.append(executor_answer_sequence(vocab, plan, s.question, s.answer, layout))
        if fracs.plangen:
            corpus.append(executor_plangen_sequence(vocab, s.question, s.answer))
    return corpus


# -- checkpoints -------------------------------------------------------------------


def _agent_meta(kind: str, cfg: ExperimentConfig, vocab: Vocabulary, model,
                provenance: dict) -> dict:
    return {
        "kind": kind,
        "format": 1,
        "dims": {
            "vocab_size": model.core.vocab_size,
            "dim": model.core.dim,
            "layers": model.core.n_layers,
            "heads": model.core.n_heads,
            "max_len": model.core.max_len,
        },
        "vocab": vocab.to_dict(),
        "precision": cfg.precision,
        "config_hash": config_hash(cfg),
        "provenance": provenance,
    }


def save_agent(path: Path, kind: str, model, vocab: Vocabulary,
               cfg: ExperimentConfig, provenance: dict,
               adapter_arrays: dict[str, np.ndarray] | None = None) -> None:
    entries: dict[str, np.ndarray] = {
        "__meta__": pack_json(_agent_meta(kind, cfg, vocab, model, provenance))}
    entries.update(model.core.state_arrays("model."))
    if adapter_arrays:
        entries.update(adapter_arrays)
    save_archive(path, entries)


def load_agent(path: Path) -> tuple[object, Vocabulary, dict]:
    if not Path(path).exists():
        raise ConfigError(f"missing checkpoint: {path}")
    entries = load_archive(path)
    meta = unpack_json(entries["__meta__"])
    vocab = Vocabulary.from_dict(meta["vocab"])
    dims = meta["dims"]
    dtype = np.float32 if meta.get("precision", "float32") == "float32" else np.float64
    cls = DiffusionLM if meta["kind"] == "planner" else AutoregressiveLM
    model = cls(dims["vocab_size"], dim=dims["dim"], n_layers=dims["layers"],
                n_heads=dims["heads"], max_len=dims["max_len"], dtype=dtype)
    model.core.load_state_arrays(entries, prefix="model.")
    return model, vocab, meta


def save_projector_checkpoint(path: Path, projector: Projector, optimizer: AdamW,
                              cfg: ExperimentConfig, train_cfg: TrainConfig,
                              provenance: dict,
                              adapter_arrays: dict[str, np.ndarray] | None = None) -> None:
    meta = {
        "kind": "projector",
        "format": 1,
        "dims": {"d_in": projector.d_in, "d_out": projector.d_out,
                 "bottleneck": projector.bottleneck, "mid": projector.mid},
        "param_count": projector.param_count,
        "train_config": train_cfg.__dict__ | {"objective": provenance.get("objective", "task-nll")},
        "optimizer": {"peak_lr": optimizer.peak_lr, "weight_decay": optimizer.weight_decay,
                      "warmup_steps": optimizer.warmup_steps,
                      "total_steps": optimizer.total_steps, "min_lr": optimizer.min_lr},
        "config_hash": config_hash(cfg),
        "provenance": provenance,
    }
    entries: dict[str, np.ndarray] = {"__meta__": pack_json(meta)}
    entries.update(projector.state_arrays())
    entries.update(optimizer.state_arrays())
    if adapter_arrays:
        entries.update(adapter_arrays)
    save_archive(path, entries)


def load_projector_checkpoint(path: Path) -> tuple[Projector, dict, dict[str, np.ndarray]]:
    if not Path(path).exists():
        raise ConfigError(f"missing checkpoint: {path}")
    entries = load_archive(path)
    meta = unpack_json(entries["__meta__"])
    dims = meta["dims"]
    dtype = np.float32 if meta.get("train_config", {}).get("precision", "float32") == "float32" \
        else np.float64
    projector = Projector(dims["d_in"], dims["d_out"], bottleneck=dims["bottleneck"],
                          mid=dims["mid"], dtype=dtype)
    projector.load_state_arrays(entries)
    return projector, meta, entries


# -- commands -----------------------------------------------------------------------


def cmd_train_planner(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab()
    layout = layout_of(cfg)
    train, _, _ = load_splits(cfg)
    sequences = planner_corpus(cfg, vocab, layout, train)
    model = DiffusionLM(vocab.size, dim=cfg.model.planner_dim,
                        n_layers=cfg.model.planner_layers, n_heads=cfg.model.planner_heads,
                        max_len=cfg.model.max_len, rng=substream(cfg.seed, "planner-init"),
                        dtype=_dtype(cfg))
    stage = cfg.planner_train
    opt = AdamW(params=model.core.param_tensors(), peak_lr=stage.lr,
                weight_decay=stage.weight_decay, warmup_steps=stage.warmup,
                total_steps=max(1, stage.epochs * int(np.ceil(len(sequences) / stage.batch))))
    curve = train_diffusion_model(model, sequences, epochs=stage.epochs,
                                  batch_size=stage.batch, optimizer=opt, seed=cfg.seed,
                                  stream="planner-train")
    _check_finite(curve, "planner training")
    provenance = {"dataset": train.provenance, "epochs": stage.epochs,
                  "final_loss": curve[-1]}
    save_agent(out / PLANNER_CKPT, "planner", model, vocab, cfg, provenance)
    _write_log(out / "planner_train_log.jsonl", curve)
    return out / PLANNER_CKPT


def cmd_train_executor(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab()
    layout = layout_of(cfg)
    train, _, _ = load_splits(cfg)
    corpus = executor_corpus(cfg, vocab, layout, train)
    model = AutoregressiveLM(vocab.size, dim=cfg.model.executor_dim,
                             n_layers=cfg.model.executor_layers,
                             n_heads=cfg.model.executor_heads,
                             max_len=cfg.model.max_len,
                             rng=substream(cfg.seed, "executor-init"), dtype=_dtype(cfg))
    stage = cfg.executor_train
    opt = AdamW(params=model.core.param_tensors(), peak_lr=stage.lr,
                weight_decay=stage.weight_decay, warmup_steps=stage.warmup,
                total_steps=max(1, stage.epochs * int(np.ceil(len(corpus) / stage.batch))))
    curve = train_lm(model, corpus, epochs=stage.epochs, batch_size=stage.batch,
                     optimizer=opt, seed=cfg.seed, stream="executor-train")
    _check_finite(curve, "executor training")
    provenance = {"dataset": train.provenance, "epochs": stage.epochs,
                  "final_loss": curve[-1]}
    save_agent(out / EXECUTOR_CKPT, "executor", model, vocab, cfg, provenance)
    _write_log(out / "executor_train_log.jsonl", curve)
    return out / EXECUTOR_CKPT


def cmd_train_projector(cfg: ExperimentConfig, projector_name: str = PROJECTOR_CKPT) -> Path:
    out = Path(cfg.out_dir)
    planner, vocab, _ = load_agent(out / PLANNER_CKPT)
    executor, vocab_e, _ = load_agent(out / EXECUTOR_CKPT)
    if vocab_e.to_dict() != vocab.to_dict():
        raise ConfigError("planner and executor checkpoints use different vocabularies")
    if planner.core.dim != cfg.model.planner_dim or executor.core.dim != cfg.model.executor_dim:
        raise ConfigError("checkpoint dimensions do not match the configuration")
    planner.set_frozen(True)
    executor.set_frozen(True)

    hash_before = {"planner": model_hash(planner.core.state_arrays()),
                   "executor": model_hash(executor.core.state_arrays())}
    train_cfg = cfg.projector_train_config()
    train, _, _ = load_splits(cfg)
    projector = Projector(planner.core.dim, executor.core.dim,
                          rng=substream(cfg.seed, f"projector-init/{cfg.projector_train.objective}"),
                          dtype=train_cfg.dtype)
    schedule = UnmaskingSchedule.uniform(cfg.layout.plan_length, cfg.layout.schedule_steps)
    result = train_projector(planner, executor, projector, train, train_cfg,
                             vocab=vocab, schedule=schedule,
                             objective=cfg.projector_train.objective)
    _check_finite(result.epoch_losses, "projector training")

    hash_after = {"planner": model_hash(planner.core.state_arrays()),
                  "executor": model_hash(executor.core.state_arrays())}
    print(f"frozen-model hash planner  pre={hash_before['planner']} post={hash_after['planner']}")
    print(f"frozen-model hash executor pre={hash_before['executor']} post={hash_after['executor']}")
    if hash_before != hash_after:
        raise NumericalError("frozen agent weights changed during projector training")

    provenance = {"dataset": train.provenance, "objective": cfg.projector_train.objective,
                  "frozen_hashes": hash_before, "final_loss": result.epoch_losses[-1],
                  "epoch_losses": result.epoch_losses}
    adapter_arrays = result.adapter.state_arrays() if result.adapter is not None else None
    save_projector_checkpoint(out / projector_name, projector, result.optimizer, cfg,
                              train_cfg, provenance, adapter_arrays)
    if adapter_arrays:
        save_agent(out / EXECUTOR_CKPT.replace(".ldarm", "_adapted.ldarm"), "executor",
                   executor, vocab, cfg, provenance, adapter_arrays=adapter_arrays)
    _write_log(out / "projector_train_log.jsonl", result.epoch_losses)
    return out / projector_name


def build_context(cfg: ExperimentConfig, need_planner: bool, need_projector: bool,
                  projector_name: str = PROJECTOR_CKPT) -> PipelineContext:
    out = Path(cfg.out_dir)
    executor, vocab, _ = load_agent(out / EXECUTOR_CKPT)
    executor.set_frozen(True)
    planner = None
    if need_planner:
        planner, vocab_p, _ = load_agent(out / PLANNER_CKPT)
        planner.set_frozen(True)
        if vocab_p.to_dict() != vocab.to_dict():
            raise ConfigError("planner and executor checkpoints use different vocabularies")
    projector = None
    if need_projector:
        projector, _, _ = load_projector_checkpoint(out / projector_name)
        if planner is not None and (projector.d_in != planner.core.dim
                                    or projector.d_out != executor.core.dim):
            raise ConfigError("projector checkpoint does not match the agent dimensions")
    return PipelineContext(vocab=vocab, layout=layout_of(cfg), executor=executor,
                           planner=planner, projector=projector,
                           schedule_steps=cfg.layout.schedule_steps,
                           decode_budget=cfg.layout.decode_budget)


def cmd_eval(cfg: ExperimentConfig, projector_name: str = PROJECTOR_CKPT) -> Path:
    out = Path(cfg.out_dir)
    _, _, test = load_splits(cfg)
    if len(test) == 0:
        raise ConfigError("empty test split")
    table = standard_pipelines(cfg.layout.plan_length, cfg.layout.decode_budget)
    configs = [table[name] for name in cfg.pipelines]
    need_planner = any(c.planner == "ddlm" or c.executor == "ddlm" for c in configs)
    need_projector = any(c.interface == "latent" for c in configs)
    ctx = build_context(cfg, need_planner, need_projector, projector_name)
    records = run_suite(ctx, configs, test)
    save_run_records(records, out / RUN_RECORDS)

    summary: dict[str, dict] = {}
    for name in cfg.pipelines:
        rows = [r for r in records if r.pipeline_id == name]
        summary[name] = {
            "accuracy": round(100.0 * sum(r.correct for r in rows) / len(rows), 4),
            "mean_planner_tokens": round(float(np.mean([r.planner_tokens for r in rows])), 4),
            "mean_executor_tokens": round(float(np.mean([r.executor_tokens for r in rows])), 4),
            "n": len(rows),
        }
    payload = {"config_hash": config_hash(cfg), "pipelines": summary}
    (out / EVAL_TABLE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    print(format_eval_table(summary))
    return out / EVAL_TABLE


def format_eval_table(summary: dict[str, dict]) -> str:
    header = (f"{'pipeline':<18}{'accuracy %':>11}{'planner tok':>13}"
              f"{'executor tok':>14}{'n':>6}")
    lines = [header, "-" * len(header)]
    for name, row in summary.items():
        lines.append(f"{name:<18}{row['accuracy']:>11.2f}{row['mean_planner_tokens']:>13.2f}"
                     f"{row['mean_executor_tokens']:>14.2f}{row['n']:>6}")
    return "\n".join(lines)


def cmd_diagnose(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    records_path = out / RUN_RECORDS
    if not records_path.exists():
        raise ConfigError(f"missing run records: {records_path}")
    records = load_run_records(records_path)
    by_pipeline: dict[str, dict[str, bool]] = {}
    benchmarks: dict[str, str] = {}
    for r in records:
        by_pipeline.setdefault(r.sample_id, {})[r.pipeline_id] = r.correct
        benchmarks[r.sample_id] = r.benchmark
    present = {r.pipeline_id for r in records}
    reports = {}
    for under_test in (PIPELINE_DDLM_ARM_TEXT, PIPELINE_DDLM_ARM_LATENT):
        if under_test in present:
            report = attribute_failures(by_pipeline, benchmarks, under_test)
            reports[under_test] = report.to_dict()
            print(render_table(report))
            print()
    if not reports:
        raise ConfigError("run records contain no planner-to-executor pipeline to diagnose")
    payload = {"config_hash": config_hash(cfg), "reports": reports}
    (out / DIAGNOSTICS).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return out / DIAGNOSTICS


def cmd_metrics(corpus_path: str | Path, n: int = 2, mode: str = "word",
                out_path: str | Path | None = None) -> dict:
    corpus_path = Path(corpus_path)
    if not corpus_path.exists():
        raise ConfigError(f"corpus file not found: {corpus_path}")
    texts = [line for line in corpus_path.read_text(encoding="utf-8").splitlines()
             if line.strip()]
    report = repetition_report(texts, n=n, mode=mode)
    payload = report.to_dict()
    print(json.dumps({k: payload[k] for k in ("distinct3", "repetition4",
                                              "lexical_repetition", "lexical_n")},
                     indent=2, sort_keys=True))
    if out_path is not None:
        Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    return payload


def cmd_reproduce(cfg: ExperimentConfig) -> list[Path]:
    """The full chain: agents, projector, evaluation, diagnosis."""
    outputs = [cmd_train_planner(cfg), cmd_train_executor(cfg), cmd_train_projector(cfg),
               cmd_eval(cfg), cmd_diagnose(cfg)]
    return outputs


# -- repetition-trend study -------------------------------------------------------


def verbose_plan(sample: TaskSample) -> str:
    """Long-form plan: resolve every displayed entry, not just the queried ones."""
    if sample.family != "kv-lookup":
        return sample.plan
    body, _, _ = sample.question.rpartition("; ")
    table = dict(entry.split("=", 1) for entry in body.split(";"))

    def resolve(key: str) -> str:
        while key in table:
            key = table[key]
        return key

    return ";".join(f"{k}={resolve(k)}" for k in table)


def repetition_trend(cfg: ExperimentConfig, plan_lengths: tuple[int, ...] = (16, 32, 64),
                     n_prompts: int = 100, epochs: int = 6) -> dict[int, dict]:
    """Sample plans at several lengths from one long-plan model; report R-4 per length.

    A separate diffusion model is trained briefly with a plan region as wide
    as the largest requested length, then sampled at each length on a fixed
    prompt set drawn from the test split.
    """
    vocab = build_vocab()
    width = max(plan_lengths)
    layout = SequenceLayout(plan_width=width, answer_width=cfg.layout.answer_width)
    train, _, test = load_splits(cfg)
    sequences = [planner_sequence(vocab, s.question, verbose_plan(s), s.answer, layout)
                 for s in train]
    model = DiffusionLM(vocab.size, dim=cfg.model.planner_dim,
                        n_layers=cfg.model.planner_layers, n_heads=cfg.model.planner_heads,
                        max_len=cfg.model.max_len + width,
                        rng=substream(cfg.seed, "trend-planner-init"), dtype=_dtype(cfg))
    opt = AdamW(params=model.core.param_tensors(), peak_lr=cfg.planner_train.lr,
                weight_decay=cfg.planner_train.weight_decay, warmup_steps=20,
                total_steps=max(1, epochs * int(np.ceil(len(sequences) / cfg.planner_train.batch))))
    curve = train_diffusion_model(model, sequences, epochs=epochs,
                                  batch_size=cfg.planner_train.batch, optimizer=opt,
                                  seed=cfg.seed, stream="trend-planner")
    _check_finite(curve, "trend planner training")

    prompts = [s.question for s in list(test)[:n_prompts]]
    results: dict[int, dict] = {}
    for length in plan_lengths:
        schedule = UnmaskingSchedule.uniform(length, max(1, length // 4))
        texts = []
        for q in prompts:
            from .encoding import planner_prompt

            prompt_ids = planner_prompt(vocab, q)
            final = sample(model, prompt_ids, length, schedule)
            texts.append(vocab.decode(final[len(prompt_ids):], strict=False))
        report = repetition_report(texts, n=2, mode="char")
        results[length] = {"repetition4": report.repetition4,
                           "lexical_repetition": report.lexical_repetition,
                           "distinct3": report.distinct3,
                           "texts": texts}
    return results
