"""Command-line surface.

Exit codes: 0 success, 2 configuration or contract error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import traceback

from .archive import ArchiveError
from .config import ConfigError, NumericalError, parse_config
from .data import DatasetError
from .pipelines import PipelineConfigError, TemplateError
from .tensor import ContractError, ShapeError
from .vocab import VocabularyError
from . import workflows

_CONFIG_ERRORS = (ConfigError, ContractError, ShapeError, DatasetError, ArchiveError,
                  VocabularyError, TemplateError, PipelineConfigError, FileNotFoundError)


def _load(args) -> "workflows.ExperimentConfig":
    cfg = parse_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentlink",
        description="Desk-scale latent-space planner-executor experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out-dir", default=None, help="override [run] out_dir")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        return p

    with_config(sub.add_parser("train-planner", help="train the diffusion planner"))
    with_config(sub.add_parser("train-executor", help="train the AR executor"))
    with_config(sub.add_parser("train-projector", help="train the latent projector"))
    with_config(sub.add_parser("eval", help="run the configured pipelines on the test split"))
    with_config(sub.add_parser("diagnose", help="attribute failures from saved run records"))
    with_config(sub.add_parser("reproduce", help="train agents + projector, then eval + diagnose"))

    metrics = sub.add_parser("metrics", help="repetition metrics over a text corpus")
    metrics.add_argument("--corpus", required=True, help="text file, one sample per line")
    metrics.add_argument("--n", type=int, default=2, help="threshold for lexical repetition")
    metrics.add_argument("--mode", choices=("word", "char"), default="word")
    metrics.add_argument("--out", default=None, help="optional JSON output path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train-planner":
            workflows.cmd_train_planner(_load(args))
        elif args.command == "train-executor":
            workflows.cmd_train_executor(_load(args))
        elif args.command == "train-projector":
            workflows.cmd_train_projector(_load(args))
        elif args.command == "eval":
            workflows.cmd_eval(_load(args))
        elif args.command == "diagnose":
            workflows.cmd_diagnose(_load(args))
        elif args.command == "reproduce":
            workflows.cmd_reproduce(_load(args))
        elif args.command == "metrics":
            workflows.cmd_metrics(args.corpus, n=args.n, mode=args.mode, out_path=args.out)
        else:  # pragma: no cover - argparse enforces the choice
            return 2
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except Exception:  # pragma: no cover - defensive
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
