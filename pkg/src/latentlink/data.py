"""Task datasets: synthetic generators, JSONL ingestion, split management.

Three synthetic families are provided, each with a reference plan string that
a planner could usefully transmit and an independent evaluator used by the
test suite to re-verify every generated answer:

  arith-chain     nested modular arithmetic, e.g. "((3+4)*2) mod 5 = ?"
  kv-lookup       reference-chain lookups, e.g. "A=9;B=A;C=B; C?"
  sort-complete   next term of an ascending arithmetic run, e.g. "3 5 7 9 ?"
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import substream

FAMILIES = ("arith-chain", "kv-lookup", "sort-complete")

_KV_KEYS = "ABCDEFGHIJ"


class DatasetError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass
class TaskSample:
    question: str
    answer: str
    family: str = ""
    difficulty: int = 0
    plan: str = ""

    def __post_init__(self):
        if not self.question:
            raise DatasetError("empty question")
        if not self.answer:
            raise DatasetError("empty answer")


@dataclass
class Dataset:
    samples: list[TaskSample]
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def questions(self) -> set[str]:
        return {s.question for s in self.samples}


# -- generators --------------------------------------------------------------


def _gen_arith(rng: np.random.Generator, min_ops: int = 1, max_ops: int = 3) -> TaskSample:
    n_ops = int(rng.integers(min_ops, max_ops + 1))
    value = int(rng.integers(1, 10))
    expr = str(value)
    steps: list[int] = []
    for _ in range(n_ops):
        operand = int(rng.integers(1, 10))
        if rng.random() < 0.5:
            expr = f"({expr}+{operand})"
            value += operand
        else:
            expr = f"({expr}*{operand})"
            value *= operand
        steps.append(value)
    modulus = int(rng.integers(3, 10))
    return TaskSample(
        question=f"{expr} mod {modulus} = ?",
        answer=str(value % modulus),
        family="arith-chain",
        difficulty=n_ops,
        plan=";".join(str(s) for s in steps),
    )


def _gen_kv(rng: np.random.Generator, n_entries: int = 5, n_query: int = 1,
            max_depth: int = 3, root_prob: float = 0.4,
            plan_style: str = "resolved") -> TaskSample:
    keys = [str(k) for k in rng.permutation(list(_KV_KEYS))[:n_entries]]
    refs: dict[str, str] = {}
    depth: dict[str, int] = {}
    for i, key in enumerate(keys):
        shallow = [k for k in keys[:i] if depth[k] < max_depth]
        if i == 0 or not shallow or rng.random() < root_prob:
            refs[key] = str(rng.integers(0, 10))
            depth[key] = 1
        else:
            target = shallow[int(rng.integers(0, len(shallow)))]
            refs[key] = target
            depth[key] = depth[target] + 1
    shown = [keys[i] for i in rng.permutation(n_entries)]
    queried = [keys[i] for i in rng.choice(n_entries, size=n_query, replace=False)]

    def resolve(key: str) -> str:
        while not refs[key].isdigit():
            key = refs[key]
        return refs[key]

    def chain(key: str) -> str:
        hops = [key]
        while not refs[hops[-1]].isdigit():
            hops.append(refs[hops[-1]])
        return "=".join(hops) + "=" + refs[hops[-1]]

    if plan_style == "resolved":
        plan = ";".join(f"{k}={resolve(k)}" for k in queried)
    elif plan_style == "chain":
        plan = ";".join(chain(k) for k in queried)
    else:
        raise DatasetError(f"unknown kv plan style {plan_style!r}")

    question = ";".join(f"{k}={refs[k]}" for k in shown) + "; " + "".join(queried) + "?"
    return TaskSample(
        question=question,
        answer="".join(resolve(k) for k in queried),
        family="kv-lookup",
        difficulty=max(depth[k] for k in queried),
        plan=plan,
    )


def _gen_sort(rng: np.random.Generator, min_shown: int = 4, max_shown: int = 5) -> TaskSample:
    start = int(rng.integers(0, 10))
    step = int(rng.integers(2, 10))
    shown = int(rng.integers(min_shown, max_shown + 1))
    terms = [start + i * step for i in range(shown)]
    return TaskSample(
        question=" ".join(str(t) for t in terms) + " ?",
        answer=str(start + shown * step),
        family="sort-complete",
        difficulty=shown,
        plan=f"d={step}",
    )


_GENERATORS = {
    "arith-chain": _gen_arith,
    "kv-lookup": _gen_kv,
    "sort-complete": _gen_sort,
}


def generate_synthetic(family: str, n: int, seed: int, split: str = "train",
                       **knobs) -> Dataset:
    """Deterministic synthetic dataset; answers are correct by construction."""
    if family not in _GENERATORS:
        raise DatasetError(f"unknown task family {family!r}")
    if n <= 0:
        raise DatasetError("n must be positive")
    rng = substream(seed, f"data/{family}/{split}")
    gen = _GENERATORS[family]
    samples = [gen(rng, **knobs) for _ in range(n)]
    return Dataset(samples=samples, split=split,
                   provenance={"generator": family, "seed": seed, "n": n, "knobs": knobs})


def generate_splits(family: str, sizes: tuple[int, int, int], seed: int,
                    **knobs) -> tuple[Dataset, Dataset, Dataset]:
    """Train/val/test with pairwise-disjoint question strings."""
    if family not in _GENERATORS:
        raise DatasetError(f"unknown task family {family!r}")
    rng = substream(seed, f"data/{family}/splits")
    gen = _GENERATORS[family]
    seen: set[str] = set()
    out: list[Dataset] = []
    for split, size in zip(("train", "val", "test"), sizes):
        samples: list[TaskSample] = []
        attempts = 0
        while len(samples) < size:
            attempts += 1
            if attempts > 200 * size + 1000:
                raise DatasetError(
                    f"could not draw {size} distinct {family} questions; family too small")
            s = gen(rng, **knobs)
            if s.question in seen:
                continue
            seen.add(s.question)
            samples.append(s)
        out.append(Dataset(samples=samples, split=split,
                           provenance={"generator": family, "seed": seed,
                                       "sizes": list(sizes), "knobs": knobs}))
    return out[0], out[1], out[2]


# -- independent evaluators (used by tests to re-verify answers) -------------

_ARITH_SAFE = re.compile(r"^[0-9+*() ]+$")


def independent_answer(sample: TaskSample) -> str:
    """Recompute the answer by a route independent of the generator."""
    if sample.family == "arith-chain":
        expr, _, tail = sample.question.partition(" mod ")
        modulus = int(tail.split(" ")[0])
        if not _ARITH_SAFE.match(expr):
            raise DatasetError(f"unsafe arithmetic expression {expr!r}")
        return str(eval(expr, {"__builtins__": {}}) % modulus)  # noqa: S307
    if sample.family == "kv-lookup":
        body, _, query = sample.question.rpartition("; ")
        table = dict(entry.split("=", 1) for entry in body.split(";"))
        values = []
        for key in query.rstrip("?"):
            hops = 0
            while key in table:
                key = table[key]
                hops += 1
                if hops > len(table) + 1:
                    raise DatasetError("reference cycle")
            values.append(key)
        return "".join(values)
    if sample.family == "sort-complete":
        terms = [int(t) for t in sample.question.rstrip(" ?").split()]
        diffs = {b - a for a, b in zip(terms, terms[1:])}
        if len(diffs) != 1:
            raise DatasetError("not an arithmetic run")
        return str(terms[-1] + diffs.pop())
    raise DatasetError(f"no evaluator for family {sample.family!r}")


# -- JSONL interchange --------------------------------------------------------


def load_jsonl(path: str | Path, split: str = "train") -> Dataset:
    """Order-preserving load; malformed lines report their line number."""
    path = Path(path)
    samples: list[TaskSample] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", line_number=lineno) from exc
            if not isinstance(obj, dict):
                raise DatasetError("line is not an object", line_number=lineno)
            for key in ("question", "answer"):
                if key not in obj or not isinstance(obj[key], str):
                    raise DatasetError(f"missing string field {key!r}", line_number=lineno)
            try:
                samples.append(TaskSample(
                    question=obj["question"],
                    answer=obj["answer"],
                    family=obj.get("family", ""),
                    difficulty=int(obj.get("difficulty", 0)),
                    plan=obj.get("plan", ""),
                ))
            except DatasetError as exc:
                raise DatasetError(str(exc), line_number=lineno) from exc
    return Dataset(samples=samples, split=split, provenance={"path": str(path)})


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for s in dataset:
            obj = {"question": s.question, "answer": s.answer}
            if s.family:
                obj["family"] = s.family
            if s.difficulty:
                obj["difficulty"] = s.difficulty
            if s.plan:
                obj["plan"] = s.plan
            handle.write(json.dumps(obj, sort_keys=True) + "\n")
