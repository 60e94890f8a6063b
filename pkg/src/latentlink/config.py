"""Experiment configuration: a line-based ``key = value`` sectioned text file.

Grammar (INI as accepted by configparser):

    [section]
    key = value            ; '#' and ';' start comments

Sections and keys are listed in DEFAULTS below; unknown sections or keys are
rejected so that typos fail loudly. A config plus the code version uniquely
determines all outputs bit-exactly in single-threaded runs.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .projector import TrainConfig


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    """A training or evaluation quantity became non-finite."""


@dataclass
class ModelConfig:
    planner_dim: int = 48
    planner_layers: int = 2
    planner_heads: int = 4
    executor_dim: int = 32
    executor_layers: int = 2
    executor_heads: int = 4
    max_len: int = 160


@dataclass
class DataConfig:
    family: str = "kv-lookup"
    train: int = 600
    val: int = 100
    test: int = 150
    seed: int = 11
    kv_entries: int = 5
    kv_queries: int = 2
    kv_depth: int = 3
    kv_plan_style: str = "resolved"

    def knobs(self) -> dict:
        if self.family == "kv-lookup":
            return {"n_entries": self.kv_entries, "n_query": self.kv_queries,
                    "max_depth": self.kv_depth, "plan_style": self.kv_plan_style}
        return {}


@dataclass
class LayoutConfig:
    plan_length: int = 6
    answer_width: int = 4
    schedule_steps: int = 3
    decode_budget: int = 6


@dataclass
class StageConfig:
    epochs: int = 30
    batch: int = 16
    lr: float = 2e-3
    weight_decay: float = 0.0
    warmup: int = 50


@dataclass
class ExecutorCorpusConfig:
    full_plan_frac: float = 0.45
    answer_plan_frac: float = 0.35
    plangen: bool = True


@dataclass
class ProjectorStageConfig:
    epochs: int = 12
    batch: int = 4
    grad_accum: int = 2
    lr: float = 5e-4
    weight_decay: float = 1e-3
    warmup: int = 300
    objective: str = "task-nll"
    lora: bool = False
    lora_rank: int = 8
    lora_alpha: float = 32.0


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    planner_train: StageConfig = field(default_factory=StageConfig)
    executor_train: StageConfig = field(default_factory=StageConfig)
    executor_corpus: ExecutorCorpusConfig = field(default_factory=ExecutorCorpusConfig)
    projector_train: ProjectorStageConfig = field(default_factory=ProjectorStageConfig)
    pipelines: tuple[str, ...] = ("arm_only", "arm_arm", "ddlm_arm_text",
                                  "ddlm_arm_latent", "ddlm_ddlm")
    out_dir: str = "runs/exp"
    seed: int = 7
    precision: str = "float32"

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["pipelines"] = list(self.pipelines)
        return payload

    def projector_train_config(self) -> TrainConfig:
        p = self.projector_train
        return TrainConfig(
            epochs=p.epochs, batch_size=p.batch, grad_accum=p.grad_accum,
            plan_length=self.layout.plan_length, seed=self.seed,
            precision=self.precision, lora_enabled=p.lora, lora_rank=p.lora_rank,
            lora_alpha=p.lora_alpha, peak_lr=p.lr, weight_decay=p.weight_decay,
            warmup_steps=p.warmup)


_SECTION_FIELDS = {
    "model": ModelConfig,
    "data": DataConfig,
    "layout": LayoutConfig,
    "planner-train": StageConfig,
    "executor-train": StageConfig,
    "executor-corpus": ExecutorCorpusConfig,
    "projector-train": ProjectorStageConfig,
}

_SECTION_ATTR = {
    "model": "model",
    "data": "data",
    "layout": "layout",
    "planner-train": "planner_train",
    "executor-train": "executor_train",
    "executor-corpus": "executor_corpus",
    "projector-train": "projector_train",
}


def _convert(raw: str, like) -> object:
    if isinstance(like, bool):
        val = raw.strip().lower()
        if val in ("true", "yes", "1", "on"):
            return True
        if val in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw.strip()


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from exc

    cfg = ExperimentConfig()
    for section in parser.sections():
        if section == "pipelines":
            names = [p.strip() for p in parser.get(section, "run", fallback="").split(",")
                     if p.strip()]
            extra = set(parser[section]) - {"run"}
            if extra:
                raise ConfigError(f"unknown keys in [pipelines]: {sorted(extra)}")
            if names:
                cfg.pipelines = tuple(names)
            continue
        if section == "run":
            for key in parser[section]:
                raw = parser.get(section, key)
                if key == "out_dir":
                    cfg.out_dir = raw.strip()
                elif key == "seed":
                    cfg.seed = int(raw)
                elif key == "precision":
                    if raw.strip() not in ("float32", "float64"):
                        raise ConfigError(f"precision must be float32 or float64, got {raw!r}")
                    cfg.precision = raw.strip()
                else:
                    raise ConfigError(f"unknown key {key!r} in [run]")
            continue
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, _SECTION_ATTR[section])
        for key in parser[section]:
            if not hasattr(target, key):
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            current = getattr(target, key)
            try:
                setattr(target, key, _convert(parser.get(section, key), current))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.layout.plan_length <= 0 or cfg.layout.answer_width <= 0:
        raise ConfigError("layout widths must be positive")
    if cfg.data.train <= 0 or cfg.data.test <= 0:
        raise ConfigError("dataset sizes must be positive")
    fracs = cfg.executor_corpus
    if not 0.0 <= fracs.full_plan_frac + fracs.answer_plan_frac <= 1.0:
        raise ConfigError("executor plan-format fractions must sum to at most 1")
    from .pipelines import standard_pipelines

    known = set(standard_pipelines(cfg.layout.plan_length))
    unknown = set(cfg.pipelines) - known
    if unknown:
        raise ConfigError(f"unknown pipelines: {sorted(unknown)}")


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()[:16]


def write_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Serialize back to the sectioned text format (for provenance copies)."""
    parser = configparser.ConfigParser()
    payload = cfg.to_dict()
    for section, attr in _SECTION_ATTR.items():
        parser[section] = {k: str(v) for k, v in payload[attr].items()}
    parser["pipelines"] = {"run": ", ".join(cfg.pipelines)}
    parser["run"] = {"out_dir": cfg.out_dir, "seed": str(cfg.seed),
                     "precision": cfg.precision}
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        parser.write(handle)
