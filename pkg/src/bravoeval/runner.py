"""Manifest-level orchestration: fuse logits and evaluate many images.

Work is distributed per image over a process pool. Each image yields its own
integer accumulator set; sets are merged per subset in manifest order, which
makes the final report independent of the worker count.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .aggregate import OOD_SUBSETS, SEMANTIC_SUBSETS, BenchmarkReport, SubsetReport
from .core import validate_pair
from .errors import BravoError, EmptyAccumulatorError, ValidationError
from .fusion import linear_fuse, mask2former_fuse
from .ingest import (
    manifest_document,
    png_size,
    read_class_map,
    read_confidence_map,
    read_tensor,
    read_validity_mask,
    write_class_map,
    write_confidence_map,
    write_manifest,
)
from .metrics import DEFAULT_ECE_BINS, DEGENERATE_POLICIES, LEVELS, AccumulatorSet, accumulate, merge, ood_metrics, semantic_metrics

log = logging.getLogger(__name__)

FPR_TARGET = 0.95


@dataclass(frozen=True)
class RunConfig:
    manifest: Path = None
    out: Path = None
    workers: int = 1
    ece_bins: int = DEFAULT_ECE_BINS
    degenerate_policy: str = "error"
    format: str = "json"
    decoder: str = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError(f"worker count must be >= 1, got {self.workers}")
        if self.ece_bins < 2:
            raise ValidationError(f"ece bins must be >= 2, got {self.ece_bins}")
        if self.degenerate_policy not in DEGENERATE_POLICIES:
            raise ValidationError(f"unknown degenerate policy {self.degenerate_policy!r}")
        if self.format not in ("json", "table"):
            raise ValidationError(f"unknown format {self.format!r}")
        if self.decoder not in (None, "linear", "mask2former"):
            raise ValidationError(f"unknown decoder {self.decoder!r}")

    def echo(self, class_count):
        """Settings that determine metric values; two reports are comparable iff these match."""
        return {
            "class_count": class_count,
            "ece_bins": self.ece_bins,
            "ece_binning": "equal-width, [lo, hi), last bin closed",
            "curve_levels": LEVELS,
            "confidence_quantization": "curves: 8-bit, round(255 * score) half up; calibration: fixed point, 255 * 2**20 units",
            "reversed_confidence": "1 - score, then quantized",
            "degenerate_policy": self.degenerate_policy,
            "fpr_target_tpr": FPR_TARGET,
            "aggregation": "subset metrics averaged, then harmonic mean",
            "decoder_override": self.decoder,
        }


def fuse_item(item, decoder=None):
    """Run the item's decoder fusion at ground-truth resolution."""
    kind = decoder or item.decoder
    if kind is None:
        raise ValidationError(f"{item.subset}/{item.id}: no logits declared")
    H, W = png_size(item.gt)
    if kind == "linear":
        if item.seg_logits is None:
            raise ValidationError(f"{item.subset}/{item.id}: linear decoder needs seg_logits")
        return linear_fuse(read_tensor(item.seg_logits), H, W)
    if item.mask_logits is None or item.class_logits is None:
        raise ValidationError(f"{item.subset}/{item.id}: mask2former decoder needs mask_logits and class_logits")
    masks = read_tensor(item.mask_logits, kind="mask-logits")
    return mask2former_fuse(masks, read_tensor(item.class_logits), H, W)


def load_unit(item, class_count, decoder=None):
    gt = read_class_map(item.gt, class_count)
    validity = read_validity_mask(item.validity) if item.validity else None
    if item.has_maps and decoder is None:
        pred = read_class_map(item.pred, class_count)
        conf = read_confidence_map(item.conf)
    else:
        fused = fuse_item(item, decoder)
        pred, conf = fused.classes, fused.confidence
    return validate_pair(pred, conf, gt, validity)


def _eval_task(task):
    item, class_count, ece_bins, decoder = task
    try:
        unit = load_unit(item, class_count, decoder)
        return accumulate(unit, AccumulatorSet(class_count, ece_bins)), None
    except (BravoError, OSError) as exc:
        return None, f"{item.subset}/{item.id}: {exc}"


def _fuse_task(task):
    item, out_dir, decoder = task
    try:
        fused = fuse_item(item, decoder)
        sub = Path(out_dir) / item.subset
        sub.mkdir(parents=True, exist_ok=True)
        pred = sub / f"{item.id}_pred.png"
        conf = sub / f"{item.id}_conf.png"
        write_class_map(fused.classes, pred)
        write_confidence_map(fused.confidence, conf)
        return (str(pred), str(conf)), None
    except (BravoError, OSError) as exc:
        return None, f"{item.subset}/{item.id}: {exc}"


def _run(fn, tasks, workers):
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


@dataclass
class EvalResult:
    report: BenchmarkReport
    accumulators: dict
    failures: list

    @property
    def degenerate(self):
        return self.report.degenerate


def evaluate_manifest(manifest, config):
    """Evaluate every item and build the benchmark report."""
    C = manifest.class_count
    items = list(manifest.items())
    tasks = [(it, C, config.ece_bins, config.decoder) for it in items]
    log.info("evaluating %d items with %d worker(s)", len(tasks), config.workers)
    results = _run(_eval_task, tasks, config.workers)

    per_subset = {}
    counts = {}
    failures = []
    for item, (acc, err) in zip(items, results):
        if err is not None:
            log.error("item failed: %s", err)
            failures.append(err)
            continue
        base = per_subset.get(item.subset)
        per_subset[item.subset] = acc if base is None else merge(base, acc)
        counts[item.subset] = counts.get(item.subset, 0) + 1

    subsets = []
    for name, items_in in manifest.subsets.items():
        if not items_in:
            log.warning("subset %s has no items; omitted from the report", name)
            continue
        acc = per_subset.get(name)
        if acc is None:
            log.warning("subset %s: every item failed; omitted from the report", name)
            continue
        notes = []
        semantic = ood = None
        if name in SEMANTIC_SUBSETS:
            try:
                semantic = semantic_metrics(acc, config.degenerate_policy, target_tpr=FPR_TARGET)
            except EmptyAccumulatorError as exc:
                notes.append(str(exc))
        if name in OOD_SUBSETS:
            try:
                ood = ood_metrics(acc, config.degenerate_policy, target_tpr=FPR_TARGET)
            except EmptyAccumulatorError as exc:
                notes.append(str(exc))
        rep = SubsetReport.build(name, semantic, ood, items=counts[name])
        rep.notes = notes + rep.notes
        subsets.append(rep)

    report = BenchmarkReport.build(subsets, config.echo(C))
    if failures:
        report.notes.append(f"{len(failures)} item(s) failed and were skipped")
    return EvalResult(report, per_subset, failures)


def fuse_manifest(manifest, out_dir, workers=1, decoder=None):
    """Write fused maps for every item with logits, plus a manifest pointing at them.

    Returns ``(manifest_path, failures)``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = list(manifest.items())
    tasks = [(it, str(out_dir), decoder) for it in items]
    log.info("fusing %d items with %d worker(s)", len(tasks), workers)
    results = _run(_fuse_task, tasks, workers)

    failures = []
    doc = {name: [] for name in manifest.subsets}
    for item, (paths, err) in zip(items, results):
        if err is not None:
            log.error("item failed: %s", err)
            failures.append(err)
            continue
        entry = {"id": item.id, "gt": item.gt}
        if item.validity:
            entry["validity"] = item.validity
        entry["pred"], entry["conf"] = paths
        doc[item.subset].append(entry)
    path = out_dir / "manifest.json"
    write_manifest(manifest_document(manifest.class_count, doc, out_dir), path)
    return path, failures
