import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bravoeval.aggregate import (
    DASH,
    BenchmarkReport,
    SubsetReport,
    average_records,
    bravo_index,
    harmonic_mean,
    load_report,
    ood_summary,
    render_comparison,
    render_json,
    render_text,
    reverse_metric,
    semantic_summary,
)
from bravoeval.errors import DegenerateCurveError, HarmonicMeanError, ValidationError
from bravoeval.metrics import MetricsRecord

from .leaderboard import LEADERBOARD

CONFIG = {"class_count": 19, "ece_bins": 15, "degenerate_policy": "error"}


def sem(miou=75.9, ece=1.7, auroc=92.3, fpr95=37.8, aupr_success=99.5, aupr_error=41.2, degenerate=()):
    values = dict(miou=miou, ece=ece, auroc=auroc, fpr95=fpr95, aupr_success=aupr_success, aupr_error=aupr_error)
    return MetricsRecord("semantic", values, degenerate)


def ood(auprc=76.7, auroc=97.1, fpr95=15.0):
    return MetricsRecord("ood", dict(auprc=auprc, auroc=auroc, fpr95=fpr95))


def report(**overrides):
    subsets = [
        SubsetReport.build("acdc", sem(**overrides), items=2),
        SubsetReport.build("smiyc", ood=ood(), items=2),
        SubsetReport.build("synobjs", sem(), ood(), items=2),
    ]
    return BenchmarkReport.build(subsets, CONFIG)


@pytest.mark.parametrize("s,o,expected", [(69.8, 88.1, 77.9), (70.8, 84.8, 77.2), (70.0, 83.4, 76.1)])
def test_bravo_index_leaderboard_anchors(s, o, expected):
    assert bravo_index(s, o) == pytest.approx(expected, abs=0.05)


def test_bravo_index_rounded_inputs():
    # 64.56 from the rounded columns; the leaderboard 64.5 used unrounded ones
    assert bravo_index(49.7, 92.1) == pytest.approx(64.5, abs=0.15)
    assert bravo_index(61.3, 61.3) == pytest.approx(61.3, rel=1e-15)


def test_bravo_index_all_rows():
    for name, bravo, s, o in LEADERBOARD:
        assert abs(bravo_index(s, o) - bravo) <= 0.15, name


def test_harmonic_mean_properties():
    assert harmonic_mean([42.0, 42.0, 42.0]) == pytest.approx(42.0, rel=1e-15)
    assert harmonic_mean([100.0, 1e-9]) < 1e-8
    with pytest.raises(HarmonicMeanError, match="ood"):
        harmonic_mean([50.0, 0.0], ["semantic", "ood"])
    with pytest.raises(HarmonicMeanError):
        harmonic_mean([50.0, None])
    with pytest.raises(ValidationError):
        harmonic_mean([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=8))
def test_harmonic_mean_bounded_by_min_and_mean(values):
    h = harmonic_mean(values)
    assert min(values) * (1 - 1e-12) <= h <= sum(values) / len(values) * (1 + 1e-12)


def test_reverse_metric():
    assert reverse_metric(1.7) == pytest.approx(98.3, abs=1e-12)
    assert reverse_metric(0.0) == 100.0
    assert reverse_metric(100.0) == 0.0
    assert reverse_metric(reverse_metric(37.8)) == pytest.approx(37.8, abs=1e-12)
    with pytest.raises(ValidationError):
        reverse_metric(100.5)


def test_semantic_summary_hand_example():
    assert semantic_summary(sem()) == pytest.approx(70.9, abs=0.05)
    assert semantic_summary(sem(100, 0, 100, 0, 100, 100)) == pytest.approx(100.0, rel=1e-15)


def test_semantic_summary_collapses_with_minimum():
    assert semantic_summary(sem(aupr_error=1e-6)) < 1e-5


def test_ood_summary_hand_example():
    assert ood_summary(ood()) == pytest.approx(85.5, abs=0.05)
    assert ood_summary(ood(100, 100, 0)) == pytest.approx(100.0, rel=1e-15)
    assert ood_summary(ood(50, 50, 50)) == pytest.approx(50.0, rel=1e-15)


def test_summary_rejects_degenerate_and_wrong_kind():
    with pytest.raises(DegenerateCurveError):
        semantic_summary(sem(aupr_error=None, degenerate=("aupr_error",)))
    with pytest.raises(ValidationError):
        ood_summary(sem())


def test_average_records_metric_wise():
    avg = average_records([sem(miou=70.0), sem(miou=80.0)], "semantic")
    assert avg["miou"] == 75.0
    assert avg["ece"] == pytest.approx(1.7)
    assert average_records([], "ood") is None
    holed = average_records([sem(), sem(aupr_error=None, degenerate=("aupr_error",))], "semantic")
    assert holed["aupr_error"] is None and holed.degenerate == ("aupr_error",)


def test_subset_report_pools_terms():
    rep = SubsetReport.build("synobjs", sem(), ood())
    terms = [75.9, 98.3, 92.3, 62.2, 99.5, 41.2, 76.7, 97.1, 85.0]
    assert rep.harmonic_mean == pytest.approx(len(terms) / sum(1 / t for t in terms), rel=1e-12)
    with pytest.raises(ValidationError):
        SubsetReport.build("smiyc", sem())


def test_benchmark_report_index():
    rep = report()
    assert rep.semantic_summary == pytest.approx(semantic_summary(sem()), rel=1e-12)
    assert rep.ood_summary == pytest.approx(ood_summary(ood()), rel=1e-12)
    assert rep.bravo_index == pytest.approx(bravo_index(rep.semantic_summary, rep.ood_summary), rel=1e-15)


def test_report_json_round_trip():
    rep = report()
    text = render_json(rep)
    back = load_report(text)
    assert back == rep
    assert render_json(back) == text


def test_reports_differing_in_one_metric_differ_in_one_cell():
    a = json.loads(render_json(report()))
    b = json.loads(render_json(report(miou=75.8)))
    diffs = []

    def walk(x, y, path):
        if isinstance(x, dict):
            for k in x:
                walk(x[k], y[k], path + [k])
        elif isinstance(x, list):
            for i, (u, v) in enumerate(zip(x, y)):
                walk(u, v, path + [i])
        elif x != y:
            diffs.append(path)

    walk(a, b, [])
    # the changed cell itself plus the values derived from it
    assert ["subsets", 0, "semantic", "values", "miou"] in diffs
    raw = [d for d in diffs if "values" in d and d[0] == "subsets"]
    assert raw == [["subsets", 0, "semantic", "values", "miou"]]

    ta = render_text(report()).splitlines()
    tb = render_text(report(miou=75.8)).splitlines()
    acdc_rows = [(x, y) for x, y in zip(ta, tb) if x.strip().startswith("ACDC") and x != y]
    assert len(acdc_rows) == 1
    changed = [(u, v) for u, v in zip(acdc_rows[0][0].split(), acdc_rows[0][1].split()) if u != v]
    assert changed == [("75.9", "75.8")]


def test_degenerate_cell_rendered_with_footnote():
    rep = BenchmarkReport.build(
        [SubsetReport.build("acdc", sem(aupr_error=None, degenerate=("aupr_error",)))], CONFIG
    )
    text = render_text(rep)
    assert DASH + "*" in text
    assert "* ACDC semantic aupr_error: degenerate curve (policy=error)" in text
    assert rep.bravo_index is None
    assert rep.degenerate == [("acdc", "semantic", "aupr_error")]


def test_comparison_orders_by_index():
    hi = BenchmarkReport(subsets=[], config=CONFIG, semantic_summary=69.8, ood_summary=88.1, bravo_index=77.9)
    lo = BenchmarkReport(subsets=[], config=CONFIG, semantic_summary=57.1, ood_summary=83.5, bravo_index=67.8)
    none = BenchmarkReport(subsets=[], config=CONFIG)
    rows = [ln for ln in render_comparison([("b", lo), ("n", none), ("a", hi)]).splitlines()[3:]]
    assert [r.split()[0] for r in rows] == ["a", "b", "n"]
    assert rows[0].split()[1] == "77.9"
    single = render_comparison([("a", hi)]).splitlines()
    assert len(single) == 4
