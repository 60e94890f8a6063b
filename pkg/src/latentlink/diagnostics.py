"""Failure attribution between planner and executor.

Among the samples where the planner-to-executor pipeline under test fails:

  setup X   the same executor succeeds when the planner is swapped for the
            autoregressive model (planner fault);
  setup Y   an all-diffusion pipeline succeeds on the same sample
            (executor fault).

The two conditions are independent and may overlap; the overlap is reported
rather than hidden. Reference pipelines are always scored from text-space
runs; only the pipeline under test switches between text and latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PIPELINE_ARM_ONLY = "arm_only"
PIPELINE_ARM_ARM = "arm_arm"
PIPELINE_DDLM_ARM_TEXT = "ddlm_arm_text"
PIPELINE_DDLM_ARM_LATENT = "ddlm_arm_latent"
PIPELINE_DDLM_DDLM = "ddlm_ddlm"

REFERENCE_PIPELINES = (PIPELINE_ARM_ARM, PIPELINE_DDLM_DDLM)


class IncompleteDataError(ValueError):
    """A sample is missing one of the pipeline results needed to classify it."""


def classify(under_test_correct: bool, arm_arm_correct: bool,
             ddlm_ddlm_correct: bool) -> tuple[bool, bool]:
    """(in setup X?, in setup Y?) for one sample."""
    if under_test_correct:
        return False, False
    return arm_arm_correct, ddlm_ddlm_correct


@dataclass
class BenchmarkDiagnostic:
    benchmark: str
    total: int = 0
    failures: int = 0
    setup_x: int = 0
    setup_y: int = 0
    overlap: int = 0

    @property
    def pct_x(self) -> float:
        return 100.0 * self.setup_x / self.failures if self.failures else 0.0

    @property
    def pct_y(self) -> float:
        return 100.0 * self.setup_y / self.failures if self.failures else 0.0

    @property
    def error_gap(self) -> float:
        return abs(self.pct_x - self.pct_y)

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "total": self.total,
            "failures": self.failures,
            "setup_x": self.setup_x,
            "setup_y": self.setup_y,
            "overlap": self.overlap,
            "pct_x": self.pct_x,
            "pct_y": self.pct_y,
            "error_gap": self.error_gap,
        }


@dataclass
class DiagnosticReport:
    under_test: str
    benchmarks: list[BenchmarkDiagnostic] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"under_test": self.under_test,
                "benchmarks": [b.to_dict() for b in self.benchmarks]}

    @classmethod
    def from_dict(cls, payload: dict) -> "DiagnosticReport":
        report = cls(under_test=payload["under_test"])
        for b in payload["benchmarks"]:
            keep = {k: b[k] for k in ("benchmark", "total", "failures",
                                      "setup_x", "setup_y", "overlap")}
            report.benchmarks.append(BenchmarkDiagnostic(**keep))
        return report


def attribute_failures(results: dict[str, dict[str, bool]],
                       benchmarks: dict[str, str],
                       under_test: str) -> DiagnosticReport:
    """Classify every sample and aggregate per benchmark.

    ``results`` maps sample id -> pipeline id -> correct. Every sample must
    carry the pipeline under test plus both reference pipelines.
    """
    per_bench: dict[str, BenchmarkDiagnostic] = {}
    for sample_id in sorted(results):
        row = results[sample_id]
        for needed in (under_test, *REFERENCE_PIPELINES):
            if needed not in row:
                raise IncompleteDataError(
                    f"sample {sample_id!r} is missing pipeline {needed!r}")
        bench = benchmarks.get(sample_id, "all")
        agg = per_bench.setdefault(bench, BenchmarkDiagnostic(benchmark=bench))
        agg.total += 1
        x, y = classify(row[under_test], row[PIPELINE_ARM_ARM], row[PIPELINE_DDLM_DDLM])
        if not row[under_test]:
            agg.failures += 1
        agg.setup_x += int(x)
        agg.setup_y += int(y)
        agg.overlap += int(x and y)
    return DiagnosticReport(under_test=under_test,
                            benchmarks=[per_bench[k] for k in sorted(per_bench)])


def render_table(report: DiagnosticReport) -> str:
    """Aligned-column table: planning / execution failure shares and their gap."""
    header = f"{'Benchmark':<16}{'Planning Failures %':>21}{'Execution Failures %':>22}{'Error Gap %':>13}"
    lines = [f"pipeline under test: {report.under_test}", header, "-" * len(header)]
    for b in report.benchmarks:
        lines.append(f"{b.benchmark:<16}{b.pct_x:>21.2f}{b.pct_y:>22.2f}{b.error_gap:>13.2f}")
    return "\n".join(lines)
