import numpy as np
import pytest

from bravoeval.errors import DegenerateCurveError, EmptyAccumulatorError, FixtureSpecError
from bravoeval.metrics import AccumulatorSet, accumulate, ece, ood_metrics, semantic_metrics
from bravoeval.core import validate_pair
from bravoeval.oracle import (
    FixtureSpec,
    brute_ece,
    brute_miou,
    exact_ap,
    exact_curves,
    fixture_suite,
    mann_whitney_auroc,
    oracle_records,
    synth_fixture,
)


def evaluate(fixtures, bins=15):
    acc = AccumulatorSet(fixtures[0].gt.class_count, bins)
    for f in fixtures:
        accumulate(validate_pair(f.pred, f.conf, f.gt, f.validity), acc)
    return acc


def test_exact_curves_pairwise_example():
    auroc, _, _ = exact_curves([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0])
    assert auroc == 75.0


def test_exact_curves_perfect():
    assert exact_curves([0.9, 0.8, 0.1], [1, 1, 0]) == (100.0, 0.0, 100.0)


@pytest.mark.parametrize("p,t", [(1, 2), (3, 10), (7, 8)])
def test_exact_curves_all_tied(p, t):
    labels = np.r_[np.ones(p), np.zeros(t - p)]
    auroc, fpr, ap = exact_curves(np.full(t, 0.5), labels)
    assert auroc == 50.0
    assert fpr == pytest.approx(95.0, abs=1e-12)
    assert ap == pytest.approx(100.0 * p / t, rel=1e-15)


def test_exact_curves_fpr_on_vertical_segment():
    _, fpr, _ = exact_curves([0.9, 0.8, 0.85, 0.1], [1, 1, 0, 0])
    assert fpr == 50.0


def test_exact_ap_rank_walk():
    assert exact_ap([0.9, 0.5, 0.7], [1, 1, 0]) == pytest.approx((1 + 2 / 3) / 2 * 100, rel=1e-15)
    assert exact_ap([0.9, 0.1], [1, 0]) == 100.0


def test_degenerate_inputs():
    with pytest.raises(DegenerateCurveError):
        exact_curves([0.3, 0.4], [1, 1])
    with pytest.raises(DegenerateCurveError):
        exact_ap([0.3], [0])


def test_mann_whitney_symmetry():
    rng = np.random.default_rng(3)
    s = rng.integers(0, 10, 200) / 10
    y = rng.random(200) < 0.4
    assert mann_whitney_auroc(s, y) + mann_whitney_auroc(-s, y) == pytest.approx(1.0, abs=1e-15)


def test_brute_miou():
    gt = np.array([[0, 0], [1, 1]])
    assert brute_miou(gt, np.array([[0, 1], [1, 1]])) == pytest.approx(58.33, abs=5e-3)
    assert brute_miou(gt, gt) == 100.0
    with pytest.raises(EmptyAccumulatorError):
        brute_miou(gt, gt, np.zeros((2, 2), bool))


def test_brute_ece_hand_examples():
    assert brute_ece([0.9, 0.9, 0.6, 0.6], [1, 0, 1, 1], 2) == pytest.approx(0.0, abs=1e-12)
    assert brute_ece([0.8, 0.8], [1, 0], 2) == pytest.approx(30.0, abs=1e-12)


def test_fixture_reproducible():
    spec = FixtureSpec(height=32, width=48, invalid_fraction=0.1, ignore_fraction=0.05)
    a, b = synth_fixture(spec, 11), synth_fixture(spec, 11)
    for name in ("gt", "pred", "conf", "validity"):
        assert getattr(a, name) == getattr(b, name)
    assert a.gt.labels.tobytes() == b.gt.labels.tobytes()
    assert synth_fixture(spec, 12).gt != a.gt


def test_perfect_fixture():
    f = synth_fixture(FixtureSpec(error_rate=0.0), 0)
    assert f.expected == {"miou": 100.0, "ece": 0.0}
    rec = semantic_metrics(evaluate([f]), "zero")
    assert rec["miou"] == 100.0 and rec["ece"] == 0.0
    assert "aupr_error" in rec.degenerate


def test_calibrated_fixture_large():
    f = synth_fixture(FixtureSpec(height=1000, width=1000, error_rate=0.5), 5)
    assert ece(evaluate([f]).calibration) <= 0.3


def test_constant_fixture_planted_gap():
    spec = FixtureSpec(height=500, width=500, error_rate=0.5, profile="constant", conf_value=0.8)
    f = synth_fixture(spec, 1)
    assert f.expected["ece"] == pytest.approx(30.0, abs=1e-12)
    assert ece(evaluate([f]).calibration) == pytest.approx(30.0, abs=0.2)


def test_disjoint_ood_fixture():
    spec = FixtureSpec(profile="uniform", conf_range=(0.8, 1.0), invalid_fraction=0.1, invalid_conf_range=(0.0, 0.2))
    f = synth_fixture(spec, 2)
    assert f.expected == {"ood_auroc": 100.0, "ood_fpr95": 0.0, "ood_auprc": 100.0}
    rec = ood_metrics(evaluate([f]))
    assert rec.values == {"auprc": 100.0, "auroc": 100.0, "fpr95": 0.0}


def test_invalid_spec():
    with pytest.raises(FixtureSpecError, match="error_rate"):
        FixtureSpec(error_rate=1.5)
    with pytest.raises(FixtureSpecError):
        FixtureSpec(conf_range=(0.9, 0.1))
    with pytest.raises(FixtureSpecError):
        FixtureSpec(profile="wild")


def test_oracle_records_match_engine():
    spec = FixtureSpec(height=24, width=40, error_rate=0.4, invalid_fraction=0.2, ignore_fraction=0.05)
    suite = fixture_suite(spec, 9, ["synobjs"], 3)
    acc = evaluate(suite["synobjs"])
    sem_ref, ood_ref = oracle_records(suite["synobjs"], "synobjs")
    sem, ood = semantic_metrics(acc), ood_metrics(acc)
    for k, v in sem_ref.values.items():
        assert sem[k] == pytest.approx(v, rel=1e-12), k
    for k, v in ood_ref.values.items():
        assert ood[k] == pytest.approx(v, rel=1e-12), k
