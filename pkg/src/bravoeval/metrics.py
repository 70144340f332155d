"""Streaming accumulators and the semantic / OOD metric suite.

Every accumulator holds integer counts only, so accumulator sets form a
commutative monoid under :func:`merge` and results are independent of pixel
order, sharding, and worker count.

Curves see confidences as 8-bit levels ``q = round(255 * score)`` and keep
one positive and one negative count per level. Reversed confidence is
``1 - score`` quantized the same way.

Calibration bins keep the pixel count, the number of correct pixels, and the
sum of confidences in fixed point, ``CONF_SCALE`` units per 1.0. An 8-bit
level ``q`` is exactly ``q * 2**20`` units, so 8-bit inputs are binned and
summed without rounding.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import IGNORE_ID
from .errors import ConfigMismatchError, DegenerateCurveError, EmptyAccumulatorError, ValidationError
from .fusion import quantize_confidence

LEVELS = 256
CONF_SCALE = 255 * 2**20
DEFAULT_ECE_BINS = 15
DEGENERATE_POLICIES = ("error", "zero", "one")

SEMANTIC_KEYS = ("miou", "ece", "auroc", "fpr95", "aupr_success", "aupr_error")
OOD_KEYS = ("auprc", "auroc", "fpr95")


@dataclass
class ConfusionAccumulator:
    class_count: int
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.class_count, self.class_count), dtype=np.int64)

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class CalibrationAccumulator:
    bins: int = DEFAULT_ECE_BINS
    count: np.ndarray = None
    correct: np.ndarray = None
    conf_units: np.ndarray = None

    def __post_init__(self):
        if self.bins < 2:
            raise ValidationError(f"ece bins must be >= 2, got {self.bins}")
        for name in ("count", "correct", "conf_units"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.bins, dtype=np.int64))

    @property
    def conf_sum(self):
        return self.conf_units / CONF_SCALE

    def bin_of_units(self, units):
        """Bin index for confidences given in fixed-point units.

        Bins are ``[b/B, (b+1)/B)`` with the last one closed; the comparison
        ``u / SCALE >= b / B`` is done in integers.
        """
        return np.minimum(np.asarray(units, dtype=np.int64) * self.bins // CONF_SCALE, self.bins - 1)

    def bin_of_level(self):
        """Bin index of every 8-bit level."""
        return self.bin_of_units(np.arange(LEVELS, dtype=np.int64) * (CONF_SCALE // 255))

    @property
    def total(self):
        return int(self.count.sum())


@dataclass
class CurveAccumulator:
    """Positive / negative counts per quantized score level."""

    polarity: str
    pos: np.ndarray = None
    neg: np.ndarray = None

    def __post_init__(self):
        if self.pos is None:
            self.pos = np.zeros(LEVELS, dtype=np.int64)
        if self.neg is None:
            self.neg = np.zeros(LEVELS, dtype=np.int64)

    @classmethod
    def from_levels(cls, levels, positive, polarity="positive"):
        levels = np.asarray(levels, dtype=np.intp).ravel()
        positive = np.asarray(positive, dtype=bool).ravel()
        acc = cls(polarity)
        acc.pos += np.bincount(levels[positive], minlength=LEVELS)
        acc.neg += np.bincount(levels[~positive], minlength=LEVELS)
        return acc

    @property
    def n_pos(self):
        return int(self.pos.sum())

    @property
    def n_neg(self):
        return int(self.neg.sum())


@dataclass
class AccumulatorSet:
    class_count: int
    ece_bins: int = DEFAULT_ECE_BINS
    confusion: ConfusionAccumulator = None
    calibration: CalibrationAccumulator = None
    correctness: CurveAccumulator = None
    error: CurveAccumulator = None
    ood: CurveAccumulator = None

    def __post_init__(self):
        if self.confusion is None:
            self.confusion = ConfusionAccumulator(self.class_count)
        if self.calibration is None:
            self.calibration = CalibrationAccumulator(self.ece_bins)
        if self.correctness is None:
            self.correctness = CurveAccumulator("correct")
        if self.error is None:
            self.error = CurveAccumulator("error")
        if self.ood is None:
            self.ood = CurveAccumulator("invalid")

    def arrays(self):
        return (
            self.confusion.counts,
            self.calibration.count,
            self.calibration.correct,
            self.calibration.conf_units,
            self.correctness.pos,
            self.correctness.neg,
            self.error.pos,
            self.error.neg,
            self.ood.pos,
            self.ood.neg,
        )

    def copy(self):
        out = AccumulatorSet(self.class_count, self.ece_bins)
        for dst, src in zip(out.arrays(), self.arrays()):
            dst[...] = src
        return out

    def __eq__(self, other):
        if not isinstance(other, AccumulatorSet):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.ece_bins == other.ece_bins
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )

    @property
    def is_empty(self):
        return not any(a.any() for a in self.arrays())


def accumulate(unit, acc):
    """Add one checked evaluation unit to ``acc`` in place and return it.

    Pixels whose ground truth is the ignore label are skipped entirely. Valid
    pixels feed the confusion matrix, calibration bins, and the two
    correctness curves; every non-ignored pixel feeds the OOD curve, with
    invalid pixels as positives.
    """
    if unit.gt.class_count != acc.class_count:
        raise ConfigMismatchError(
            f"unit has {unit.gt.class_count} classes, accumulator {acc.class_count}"
        )
    C = acc.class_count
    gt = unit.gt.labels
    keep = gt != IGNORE_ID
    if unit.conf.levels is not None:
        levels = unit.conf.levels
        # exact for 8-bit inputs: round(255 * (1 - q/255)) == 255 - q
        reverse = 255 - levels
    else:
        levels = quantize_confidence(unit.conf.scores)
        reverse = quantize_confidence(1.0 - unit.conf.scores)
    validity = unit.validity.valid
    valid = keep & validity

    g = gt[valid].astype(np.intp)
    p = unit.pred.labels[valid].astype(np.intp)
    lv = levels[valid].astype(np.intp)
    rv = reverse[valid].astype(np.intp)
    correct = g == p

    acc.confusion.counts += np.bincount(g * C + p, minlength=C * C).reshape(C, C)

    n_level = np.bincount(lv, minlength=LEVELS)
    c_level = np.bincount(lv[correct], minlength=LEVELS)
    cal = acc.calibration
    if unit.conf.levels is not None:
        bin_idx = cal.bin_of_level()
        np.add.at(cal.count, bin_idx, n_level)
        np.add.at(cal.correct, bin_idx, c_level)
        np.add.at(cal.conf_units, bin_idx, n_level * np.arange(LEVELS) * (CONF_SCALE // 255))
    else:
        units = np.rint(unit.conf.scores[valid] * CONF_SCALE).astype(np.int64)
        b = cal.bin_of_units(units)
        cal.count += np.bincount(b, minlength=cal.bins)
        cal.correct += np.bincount(b[correct], minlength=cal.bins)
        # float weights are exact here: a bin sum stays far below 2**53
        cal.conf_units += np.bincount(b, weights=units, minlength=cal.bins).astype(np.int64)

    acc.correctness.pos += c_level
    acc.correctness.neg += n_level - c_level
    acc.error.pos += np.bincount(rv[~correct], minlength=LEVELS)
    acc.error.neg += np.bincount(rv[correct], minlength=LEVELS)

    r = reverse[keep].astype(np.intp)
    invalid = ~validity[keep]
    acc.ood.pos += np.bincount(r[invalid], minlength=LEVELS)
    acc.ood.neg += np.bincount(r[~invalid], minlength=LEVELS)
    return acc


def merge(a, b):
    """Element-wise sum of two accumulator sets with the same configuration."""
    if (a.class_count, a.ece_bins) != (b.class_count, b.ece_bins):
        raise ConfigMismatchError(
            f"cannot merge accumulators: classes/bins {a.class_count}/{a.ece_bins} "
            f"vs {b.class_count}/{b.ece_bins}"
        )
    out = a.copy()
    for dst, src in zip(out.arrays(), b.arrays()):
        dst += src
    return out


def miou(conf):
    counts = conf.counts if isinstance(conf, ConfusionAccumulator) else np.asarray(conf)
    if counts.sum() == 0:
        raise EmptyAccumulatorError("mIoU: no pixels were counted")
    inter = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - np.diag(counts)
    present = union > 0
    return float(np.mean(inter[present] / union[present]) * 100.0)


def per_class_iou(conf):
    counts = conf.counts
    inter = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - np.diag(counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), np.nan)


def ece(cal):
    """Bin-weighted |accuracy - mean confidence|, in percent.

    Computed as ``sum_b |SCALE * correct_b - units_b| / (SCALE * n)`` so the
    numerator is an exact integer.
    """
    n = cal.total
    if n == 0:
        raise EmptyAccumulatorError("ECE: no pixels were counted")
    gap = sum(abs(CONF_SCALE * int(c) - int(u)) for c, u in zip(cal.correct, cal.conf_units))
    return gap / (CONF_SCALE * n) * 100.0


def _sweep(curve):
    """Cumulative (tp, fp) at each occupied level, highest score first."""
    pos = curve.pos[::-1]
    neg = curve.neg[::-1]
    occupied = (pos + neg) > 0
    tp = np.cumsum(pos)[occupied]
    fp = np.cumsum(neg)[occupied]
    return [int(v) for v in tp], [int(v) for v in fp]


def _require_roc(curve, metric):
    if curve.n_pos == 0 or curve.n_neg == 0:
        which = "positive" if curve.n_pos == 0 else "negative"
        raise DegenerateCurveError(
            f"no {which} pixels on the {curve.polarity} curve", metric=metric
        )


def roc_curve(curve):
    """ROC vertices ``[(fpr, tpr), ...]`` from (0, 0) to (1, 1).

    One vertex per occupied level: pixels tied at a level move the curve in a
    single diagonal step.
    """
    _require_roc(curve, "roc")
    tp, fp = _sweep(curve)
    P, N = curve.n_pos, curve.n_neg
    points = [(0.0, 0.0)] + [(f / N, t / P) for t, f in zip(tp, fp)]
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def auroc(curve):
    """Trapezoidal ROC area in percent (ties count one half)."""
    _require_roc(curve, "auroc")
    tp, fp = _sweep(curve)
    area2 = 0
    prev_t = prev_f = 0
    for t, f in zip(tp, fp):
        area2 += (f - prev_f) * (t + prev_t)
        prev_t, prev_f = t, f
    return area2 / (2 * curve.n_pos * curve.n_neg) * 100.0


def fpr_at_tpr(curve, target_tpr=0.95):
    """FPR where the ROC polyline first reaches ``target_tpr``, in percent."""
    _require_roc(curve, "fpr95")
    points = roc_curve(curve)
    for (f0, t0), (f1, t1) in zip(points, points[1:]):
        if t1 >= target_tpr:
            if t0 >= target_tpr:
                return f0 * 100.0
            return (f0 + (target_tpr - t0) / (t1 - t0) * (f1 - f0)) * 100.0
    return points[-1][0] * 100.0


def average_precision(curve, metric="ap"):
    """Step-wise area under precision/recall: sum of recall gain x precision."""
    P = curve.n_pos
    if P == 0:
        raise DegenerateCurveError(f"no positive pixels on the {curve.polarity} curve", metric=metric)
    tp, fp = _sweep(curve)
    ap = 0.0
    prev = 0
    for t, f in zip(tp, fp):
        if t > prev:
            ap += (t - prev) / P * (t / (t + f))
        prev = t
    return ap * 100.0


@dataclass
class MetricsRecord:
    """Semantic or OOD metrics for one subset, all in percent.

    A metric whose curve was degenerate is listed in ``degenerate``; its value
    is ``None`` under the ``error`` policy, or the substituted constant
    otherwise.
    """

    kind: str
    values: dict
    degenerate: tuple = field(default=())

    def __post_init__(self):
        keys = SEMANTIC_KEYS if self.kind == "semantic" else OOD_KEYS
        if self.kind not in ("semantic", "ood"):
            raise ValidationError(f"unknown record kind {self.kind!r}")
        if tuple(self.values) != keys:
            self.values = {k: self.values.get(k) for k in keys}
        self.degenerate = tuple(self.degenerate)
        for k, v in self.values.items():
            if v is not None and not (0.0 <= v <= 100.0):
                raise ValidationError(f"{k} = {v!r} outside [0, 100]")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def complete(self):
        return all(v is not None for v in self.values.values())

    def to_dict(self):
        return {"kind": self.kind, "values": dict(self.values), "degenerate": list(self.degenerate)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d["values"]), tuple(d.get("degenerate", ())))


def _guarded(name, fn, policy, strict, degenerate):
    if policy not in DEGENERATE_POLICIES:
        raise ValidationError(f"unknown degenerate policy {policy!r}")
    try:
        return fn()
    except DegenerateCurveError as exc:
        if policy == "error" and strict:
            raise DegenerateCurveError(str(exc), metric=name) from exc
        degenerate.append(name)
        return {"error": None, "zero": 0.0, "one": 100.0}[policy]


def semantic_metrics(acc, policy="error", strict=False, target_tpr=0.95):
    """mIoU, ECE, AUROC, FPR@95, AUPR-Success and AUPR-Error of valid pixels.

    With ``strict=True`` and the ``error`` policy a degenerate curve raises;
    otherwise the metric is recorded as degenerate.
    """
    if acc.confusion.total == 0:
        raise EmptyAccumulatorError("semantic metrics: no valid pixels were counted")
    degenerate = []
    g = lambda name, fn: _guarded(name, fn, policy, strict, degenerate)  # noqa: E731
    values = {
        "miou": miou(acc.confusion),
        "ece": ece(acc.calibration),
        "auroc": g("auroc", lambda: auroc(acc.correctness)),
        "fpr95": g("fpr95", lambda: fpr_at_tpr(acc.correctness, target_tpr)),
        "aupr_success": g("aupr_success", lambda: average_precision(acc.correctness)),
        "aupr_error": g("aupr_error", lambda: average_precision(acc.error)),
    }
    return MetricsRecord("semantic", values, tuple(degenerate))


def ood_metrics(acc, policy="error", strict=False, target_tpr=0.95):
    """AUPRC, AUROC and FPR@95 for detecting invalid pixels by reversed confidence."""
    if acc.ood.n_pos + acc.ood.n_neg == 0:
        raise EmptyAccumulatorError("OOD metrics: no pixels were counted")
    degenerate = []
    g = lambda name, fn: _guarded(name, fn, policy, strict, degenerate)  # noqa: E731
    values = {
        "auprc": g("auprc", lambda: average_precision(acc.ood)),
        "auroc": g("auroc", lambda: auroc(acc.ood)),
        "fpr95": g("fpr95", lambda: fpr_at_tpr(acc.ood, target_tpr)),
    }
    return MetricsRecord("ood", values, tuple(degenerate))
