"""Setup X / setup Y failure attribution."""

import pytest

from latentlink import diagnostics as DG


def test_classify_truth_table():
    # (under test, arm->arm, ddlm->ddlm) -> (X, Y)
    assert DG.classify(False, True, False) == (True, False)
    assert DG.classify(True, True, True) == (False, False)
    assert DG.classify(False, True, True) == (True, True)
    assert DG.classify(False, False, False) == (False, False)
    assert DG.classify(False, False, True) == (False, True)


def _results(rows):
    results = {}
    benchmarks = {}
    for i, (ut, aa, dd) in enumerate(rows):
        sid = f"s{i:03d}"
        results[sid] = {
            DG.PIPELINE_DDLM_ARM_TEXT: ut,
            DG.PIPELINE_ARM_ARM: aa,
            DG.PIPELINE_DDLM_DDLM: dd,
        }
        benchmarks[sid] = "kv-lookup"
    return results, benchmarks


def test_percentages_direct_count():
    rows = [(False, True, False)] * 4 + [(False, False, True)] * 3 + [(False, False, False)] * 3
    results, benchmarks = _results(rows)
    report = DG.attribute_failures(results, benchmarks, DG.PIPELINE_DDLM_ARM_TEXT)
    b = report.benchmarks[0]
    assert b.failures == 10
    assert b.setup_x == 4 and b.setup_y == 3
    assert b.pct_x == 40.0 and b.pct_y == 30.0


def test_zero_failures_convention():
    results, benchmarks = _results([(True, True, True)] * 5)
    b = DG.attribute_failures(results, benchmarks, DG.PIPELINE_DDLM_ARM_TEXT).benchmarks[0]
    assert b.failures == 0
    assert b.pct_x == 0.0 and b.pct_y == 0.0


def test_integer_recovery():
    rows = [(False, True, True)] * 6 + [(False, True, False)] * 2 + [(False, False, False)] * 8
    results, benchmarks = _results(rows)
    b = DG.attribute_failures(results, benchmarks, DG.PIPELINE_DDLM_ARM_TEXT).benchmarks[0]
    assert round(b.pct_x * b.failures / 100.0) == b.setup_x
    assert round(b.pct_y * b.failures / 100.0) == b.setup_y
    assert b.overlap == 6


def test_missing_pipeline_is_an_error():
    results = {"s0": {DG.PIPELINE_DDLM_ARM_TEXT: False, DG.PIPELINE_ARM_ARM: True}}
    with pytest.raises(DG.IncompleteDataError):
        DG.attribute_failures(results, {"s0": "kv"}, DG.PIPELINE_DDLM_ARM_TEXT)


def test_report_serialization_roundtrip():
    rows = [(False, True, False)] * 3 + [(True, True, True)] * 2
    results, benchmarks = _results(rows)
    report = DG.attribute_failures(results, benchmarks, DG.PIPELINE_DDLM_ARM_TEXT)
    clone = DG.DiagnosticReport.from_dict(report.to_dict())
    assert clone.to_dict() == report.to_dict()


def test_render_table_columns():
    results, benchmarks = _results([(False, True, False)] * 2)
    report = DG.attribute_failures(results, benchmarks, DG.PIPELINE_DDLM_ARM_TEXT)
    table = DG.render_table(report)
    assert "Planning Failures %" in table
    assert "Execution Failures %" in table
    assert "Error Gap %" in table
    assert "kv-lookup" in table
