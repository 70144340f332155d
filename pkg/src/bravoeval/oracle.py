"""Brute-force references and synthetic fixtures.

The references deliberately avoid the streaming machinery: curves come from a
full sort of the raw scores, mIoU from explicit pixel sets, ECE from per-pixel
bin assignment, and mask fusion from explicit loops. Agreement with the
histogram engine is therefore evidence, not a tautology.

Fixtures draw from numpy's PCG64 generator seeded with
``SeedSequence(seed)``; the stream for a given seed is stable across
platforms.
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import IGNORE_ID, ClassMap, ConfidenceMap, ValidityMask
from .errors import DegenerateCurveError, EmptyAccumulatorError, FixtureSpecError

PROFILES = ("calibrated", "constant", "uniform")


def _tie_groups(scores, labels):
    """Sort descending and return per-distinct-score (n_pos, n_neg) arrays."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    cum = np.r_[0, np.cumsum(y)]
    n_pos = cum[ends] - cum[starts]
    return n_pos, (ends - starts) - n_pos


def mann_whitney_auroc(scores, labels):
    """P(score_pos > score_neg) + 0.5 P(tie), from midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    P = int(labels.sum())
    N = len(labels) - P
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    # 1-based midrank of a tie group [a, b) is (a + 1 + b) / 2
    twice_mid = np.repeat(starts + 1 + ends, ends - starts)
    twice_rank_sum = int(twice_mid[labels[order]].sum())
    u2 = twice_rank_sum - P * (P + 1)
    return u2 / (2 * P * N)


def exact_curves(scores, labels, target_tpr=0.95):
    """Reference (AUROC, FPR@target, AP) in percent for binary labels."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    P = int(labels.sum())
    N = len(labels) - P
    if P == 0 or N == 0:
        raise DegenerateCurveError("need at least one positive and one negative")
    n_pos, n_neg = _tie_groups(scores, labels)

    tp = fp = 0
    fpr95 = None
    ap = 0.0
    prev_tpr = prev_fpr = 0.0
    for gp, gn in zip(n_pos.tolist(), n_neg.tolist()):
        tp += gp
        fp += gn
        tpr, fpr = tp / P, fp / N
        if fpr95 is None and tpr >= target_tpr:
            if prev_tpr >= target_tpr:
                fpr95 = prev_fpr
            else:
                frac = (target_tpr - prev_tpr) / (tpr - prev_tpr)
                fpr95 = prev_fpr + frac * (fpr - prev_fpr)
        if gp:
            ap += gp / P * (tp / (tp + fp))
        prev_tpr, prev_fpr = tpr, fpr
    return mann_whitney_auroc(scores, labels) * 100.0, fpr95 * 100.0, ap * 100.0


def exact_ap(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    P = int(labels.sum())
    if P == 0:
        raise DegenerateCurveError("need at least one positive")
    n_pos, n_neg = _tie_groups(scores, labels)
    tp = np.cumsum(n_pos)
    seen = tp + np.cumsum(n_neg)
    hit = n_pos > 0
    return float(sum((n_pos[hit] / P) * (tp[hit] / seen[hit]))) * 100.0


def _labels(x):
    return x.labels if isinstance(x, ClassMap) else np.asarray(x)


def _valid(validity, shape):
    if validity is None:
        return np.ones(shape, dtype=bool)
    return validity.valid if isinstance(validity, ValidityMask) else np.asarray(validity, dtype=bool)


def brute_miou(gt, pred, validity=None):
    """mIoU in percent from explicit per-class pixel sets."""
    g = _labels(gt)
    p = _labels(pred)
    counted = (g != IGNORE_ID) & _valid(validity, g.shape)
    if not counted.any():
        raise EmptyAccumulatorError("no valid, labelled pixels")
    g_flat = g.ravel()
    p_flat = p.ravel()
    idx = np.flatnonzero(counted.ravel())
    classes = sorted(set(g_flat[idx].tolist()) | set(p_flat[idx].tolist()))
    ious = []
    for c in classes:
        gt_set = set(idx[g_flat[idx] == c].tolist())
        pred_set = set(idx[p_flat[idx] == c].tolist())
        union = gt_set | pred_set
        ious.append(len(gt_set & pred_set) / len(union))
    return sum(ious) / len(ious) * 100.0


def brute_ece(conf, correct, bins=15):
    """ECE in percent for 8-bit confidences, one pixel at a time.

    Bin ``b`` holds confidences in ``[b/B, (b+1)/B)``; the last bin is closed.
    """
    conf = np.asarray(conf, dtype=np.float64).ravel()
    correct = np.asarray(correct, dtype=bool).ravel()
    if conf.size == 0:
        raise EmptyAccumulatorError("no pixels")
    levels = np.rint(conf * 255).astype(np.int64)
    edges = np.arange(1, bins, dtype=np.int64) * 255
    which = np.searchsorted(edges, levels * bins, side="right")
    total = 0.0
    for b in range(bins):
        inside = which == b
        n = int(inside.sum())
        if n:
            total += n / conf.size * abs(correct[inside].mean() - conf[inside].mean())
    return total * 100.0


def _bilinear_at(src, y, x, H, W):
    """One output sample of a half-pixel bilinear resize of a 2-D array."""
    h, w = src.shape

    def tap(d, n_src, n_dst):
        s = (d + 0.5) * (n_src / n_dst) - 0.5
        s = min(max(s, 0.0), n_src - 1)
        i0 = int(math.floor(s))
        return i0, min(i0 + 1, n_src - 1), s - i0

    y0, y1, fy = tap(y, h, H)
    x0, x1, fx = tap(x, w, W)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def brute_mask2former(mask_logits, class_logits, H, W):
    """Loop-based mask fusion: returns (scores C x H x W, classes, confidence)."""
    M = np.asarray(getattr(mask_logits, "data", mask_logits), dtype=np.float64)
    CL = np.asarray(getattr(class_logits, "data", class_logits), dtype=np.float64)
    if CL.ndim == 3:
        CL = CL[:, :, 0]
    N = M.shape[0]
    C = CL.shape[1] - 1
    pc = np.zeros((N, C))
    for n in range(N):
        row = [math.exp(v - max(CL[n])) for v in CL[n]]
        z = sum(row)
        for c in range(C):
            pc[n, c] = row[c] / z
    scores = np.zeros((C, H, W))
    classes = np.zeros((H, W), dtype=np.uint8)
    conf = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            pm = [1.0 / (1.0 + math.exp(-_bilinear_at(M[n], y, x, H, W))) for n in range(N)]
            best = 0
            for c in range(C):
                total = 0.0
                for n in range(N):
                    total += pm[n] * pc[n, c]
                scores[c, y, x] = total
                if total > scores[best, y, x]:
                    best = c
            classes[y, x] = best
            conf[y, x] = min(scores[best, y, x], 1.0)
    return scores, classes, conf


def brute_linear(seg_logits, H, W):
    """Loop-based linear-decoder fusion: returns (classes, confidence)."""
    L = np.asarray(getattr(seg_logits, "data", seg_logits), dtype=np.float64)
    C = L.shape[0]
    classes = np.zeros((H, W), dtype=np.uint8)
    conf = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            z = [_bilinear_at(L[c], y, x, H, W) for c in range(C)]
            m = max(z)
            e = [math.exp(v - m) for v in z]
            best = z.index(m)
            classes[y, x] = best
            conf[y, x] = e[best] / sum(e)
    return classes, conf


@dataclass(frozen=True)
class FixtureSpec:
    """Planted parameters of a synthetic evaluation image.

    profile
        ``calibrated``: confidence drawn around ``1 - error_rate`` and each
        pixel is correct with probability equal to its confidence.
        ``constant``: every pixel has confidence ``conf_value``.
        ``uniform``: confidence uniform on ``conf_range``.
        For the last two, correctness is independent with rate ``1 - error_rate``.
    invalid_conf_range
        When set, invalid pixels draw their confidence uniformly from it.
    """

    height: int = 64
    width: int = 64
    class_count: int = 19
    error_rate: float = 0.3
    profile: str = "calibrated"
    conf_value: float = 0.8
    conf_range: tuple = (0.0, 1.0)
    invalid_fraction: float = 0.0
    invalid_conf_range: tuple = None
    ignore_fraction: float = 0.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise FixtureSpecError(f"bad extents {self.height}x{self.width}")
        if not 2 <= self.class_count <= 255:
            raise FixtureSpecError(f"class_count {self.class_count} outside 2..255")
        if self.profile not in PROFILES:
            raise FixtureSpecError(f"unknown profile {self.profile!r}; choose from {PROFILES}")
        for name in ("error_rate", "conf_value", "invalid_fraction", "ignore_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise FixtureSpecError(f"{name} = {v!r} is not a probability in [0, 1]")
        for name in ("conf_range", "invalid_conf_range"):
            r = getattr(self, name)
            if r is None:
                continue
            if len(r) != 2 or not 0.0 <= r[0] <= r[1] <= 1.0:
                raise FixtureSpecError(f"{name} = {r!r} must satisfy 0 <= lo <= hi <= 1")
            object.__setattr__(self, name, (float(r[0]), float(r[1])))


@dataclass
class Fixture:
    seed: int
    spec: FixtureSpec
    gt: ClassMap
    pred: ClassMap
    conf: ConfidenceMap
    validity: ValidityMask
    expected: dict = field(default_factory=dict)


def _levels(x):
    return np.floor(np.asarray(x) * 255.0 + 0.5).astype(np.uint8)


def synth_fixture(spec, seed):
    """Generate one fixture; the same (spec, seed) always gives the same rasters."""
    if not isinstance(spec, FixtureSpec):
        spec = FixtureSpec(**spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    shape = (spec.height, spec.width)
    C = spec.class_count
    e = spec.error_rate

    truth = rng.integers(0, C, size=shape)
    valid = rng.random(shape) >= spec.invalid_fraction
    ignored = rng.random(shape) < spec.ignore_fraction
    if spec.profile == "calibrated":
        half = min(e, 1.0 - e)
        q = _levels(rng.uniform(1.0 - e - half, 1.0 - e + half, size=shape))
        correct = rng.random(shape) < q / 255.0
    elif spec.profile == "constant":
        q = np.full(shape, _levels(spec.conf_value), dtype=np.uint8)
        correct = rng.random(shape) < 1.0 - e
    else:
        q = _levels(rng.uniform(*spec.conf_range, size=shape))
        correct = rng.random(shape) < 1.0 - e
    shift = rng.integers(1, C, size=shape)
    if spec.invalid_conf_range is not None:
        q_invalid = _levels(rng.uniform(*spec.invalid_conf_range, size=shape))
        q = np.where(valid, q, q_invalid)

    pred = np.where(correct, truth, (truth + shift) % C).astype(np.uint8)
    gt = np.where(ignored, IGNORE_ID, truth).astype(np.uint8)

    expected = {}
    if e == 0.0 and (q[valid & ~ignored] == 255).all():
        expected.update(miou=100.0, ece=0.0)
    if spec.profile == "constant" and spec.invalid_conf_range is None:
        expected["ece"] = abs((1.0 - e) - _levels(spec.conf_value) / 255.0) * 100.0
    if spec.invalid_conf_range is not None and 0.0 < spec.invalid_fraction < 1.0:
        valid_lo = spec.conf_range[0] if spec.profile == "uniform" else None
        if valid_lo is not None and _levels(spec.invalid_conf_range[1]) < _levels(valid_lo):
            expected.update(ood_auroc=100.0, ood_fpr95=0.0, ood_auprc=100.0)

    return Fixture(
        seed=seed,
        spec=spec,
        gt=ClassMap(gt, C),
        pred=ClassMap(pred, C),
        conf=ConfidenceMap.from_levels(q),
        validity=ValidityMask(valid),
        expected=expected,
    )


def oracle_records(fixtures, subset, policy="error", bins=15, target_tpr=0.95):
    """Semantic / OOD records for one subset computed by the references.

    Pixels of all fixtures are pooled, as the streaming engine does.
    """
    from .aggregate import OOD_SUBSETS, SEMANTIC_SUBSETS
    from .metrics import MetricsRecord

    gts, preds, confs, valids = [], [], [], []
    for f in fixtures:
        keep = f.gt.labels != IGNORE_ID
        gts.append(f.gt.labels[keep])
        preds.append(f.pred.labels[keep])
        confs.append(f.conf.scores[keep])
        valids.append(f.validity.valid[keep])
    g, p, c, v = (np.concatenate(a) for a in (gts, preds, confs, valids))
    fill = {"error": None, "zero": 0.0, "one": 100.0}[policy]

    def roc_pair(scores, labels, deg):
        try:
            auroc, fpr, _ = exact_curves(scores, labels, target_tpr)
            return auroc, fpr
        except DegenerateCurveError:
            deg += ["auroc", "fpr95"]
            return fill, fill

    def ap(scores, labels, name, deg):
        try:
            return exact_ap(scores, labels)
        except DegenerateCurveError:
            deg.append(name)
            return fill

    semantic = ood = None
    if subset in SEMANTIC_SUBSETS:
        gv, pv, cv = g[v], p[v], c[v]
        ok = gv == pv
        deg = []
        auroc, fpr = roc_pair(cv, ok, deg)
        values = {
            "miou": brute_miou(gv[None, :], pv[None, :]),
            "ece": brute_ece(cv, ok, bins),
            "auroc": auroc,
            "fpr95": fpr,
            "aupr_success": ap(cv, ok, "aupr_success", deg),
            "aupr_error": ap(1.0 - cv, ~ok, "aupr_error", deg),
        }
        semantic = MetricsRecord("semantic", values, tuple(deg))
    if subset in OOD_SUBSETS:
        deg = []
        invalid = ~v
        rev = 1.0 - c
        auprc = ap(rev, invalid, "auprc", deg)
        auroc, fpr = roc_pair(rev, invalid, deg)
        ood = MetricsRecord("ood", {"auprc": auprc, "auroc": auroc, "fpr95": fpr}, tuple(deg))
    return semantic, ood


def subset_seed(seed, subset_index, image_index):
    """Per-image seed derived from the run seed."""
    ss = np.random.SeedSequence([seed, subset_index, image_index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def fixture_suite(spec, seed, subsets, images):
    """``{subset: [Fixture, ...]}`` for a whole synthetic benchmark.

    ``spec`` may be a FixtureSpec or a ``{subset: FixtureSpec}`` mapping.
    """
    from .aggregate import SUBSETS

    suite = {}
    for name in subsets:
        s = spec[name] if isinstance(spec, dict) else spec
        idx = SUBSETS.index(name)
        suite[name] = [synth_fixture(s, subset_seed(seed, idx, i)) for i in range(images)]
    return suite


def export_suite(suite, out_dir, emit="maps", patch=8, masks=4, logit_scale=1.0, seed=0):
    """Write a fixture suite as PNG/tensor files plus a manifest.

    ``emit="maps"`` writes fused class and confidence maps. ``"linear"`` and
    ``"mask2former"`` write random decoder logits at ``1/patch`` resolution
    instead (scaled by ``logit_scale``; zero gives uniform logits), leaving
    fusion to the ``fuse`` command.
    """
    from .aggregate import SUBSETS
    from .ingest import manifest_document, write_class_map, write_confidence_map, write_manifest, write_tensor, write_validity_mask

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    class_count = None
    doc_subsets = {}
    for name, fixtures in suite.items():
        sub = out / name
        sub.mkdir(exist_ok=True)
        items = []
        for i, f in enumerate(fixtures):
            class_count = f.gt.class_count
            fid = f"{name}_{i:04d}"
            item = {"id": fid, "gt": sub / f"{fid}_gt.png", "validity": sub / f"{fid}_validity.png"}
            write_class_map(f.gt, item["gt"])
            write_validity_mask(f.validity, item["validity"])
            if emit == "maps":
                item["pred"] = sub / f"{fid}_pred.png"
                item["conf"] = sub / f"{fid}_conf.png"
                write_class_map(f.pred, item["pred"])
                write_confidence_map(f.conf, item["conf"])
            else:
                H, W = f.gt.shape
                h, w = max(H // patch, 1), max(W // patch, 1)
                rng = np.random.Generator(np.random.PCG64(subset_seed(seed, SUBSETS.index(name), 10_000 + i)))
                C = f.gt.class_count
                if emit == "linear":
                    path = sub / f"{fid}_seg.bten"
                    write_tensor(rng.standard_normal((C, h, w)).astype(np.float32) * np.float32(logit_scale), path)
                    item["logits"] = {"decoder": "linear", "seg_logits": path}
                elif emit == "mask2former":
                    mpath = sub / f"{fid}_masks.bten"
                    cpath = sub / f"{fid}_classes.bten"
                    write_tensor(rng.standard_normal((masks, h, w)).astype(np.float32) * np.float32(logit_scale), mpath)
                    write_tensor(rng.standard_normal((masks, C + 1)).astype(np.float32) * np.float32(logit_scale), cpath)
                    item["logits"] = {"decoder": "mask2former", "mask_logits": mpath, "class_logits": cpath}
                else:
                    raise FixtureSpecError(f"unknown emit mode {emit!r}")
            items.append(item)
        doc_subsets[name] = items
    manifest_path = out / "manifest.json"
    write_manifest(manifest_document(class_count or 19, doc_subsets, out), manifest_path)
    return manifest_path


def spec_dict(spec):
    return asdict(spec)
