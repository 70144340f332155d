"""Turn decoder logits into a class map and a confidence map.

Two decoders are supported. A linear decoder produces per-class logits at
patch resolution; these are upsampled, softmaxed, and the winning class and
its probability are kept. A mask-classification decoder produces N mask logits
and N class-logit rows (with a trailing no-object entry); per-pixel class
scores are the sum over masks of mask probability times class probability.

Everything here works in float64 and processes the output image in horizontal
bands so that full-resolution C x H x W intermediates are never materialized
for large images.
"""

from dataclasses import dataclass

import numpy as np

from .core import ClassMap, ConfidenceMap, LogitsTensor
from .errors import ShapeMismatchError, UpsampleError, ValidationError

BAND_ROWS = 64


@dataclass(frozen=True)
class FusedPrediction:
    classes: ClassMap
    confidence: ConfidenceMap

    def __post_init__(self):
        if self.classes.shape != self.confidence.shape:
            raise ShapeMismatchError(
                f"class map {self.classes.shape} and confidence map "
                f"{self.confidence.shape} differ"
            )


def _as_array(t):
    return t.data if isinstance(t, LogitsTensor) else np.asarray(t)


def linear_decode(features, weights, bias):
    """Apply a per-pixel linear layer: ``L[c] = bias[c] + sum_e W[c, e] F[e]``."""
    feats = _as_array(features)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if feats.ndim != 3:
        raise ShapeMismatchError(f"features must be E x h x w, got {feats.shape}")
    if weights.ndim != 2 or weights.shape[1] != feats.shape[0]:
        raise ShapeMismatchError(
            f"weights {weights.shape} do not match feature dimension {feats.shape[0]}"
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(f"bias {bias.shape} does not match {weights.shape[0]} classes")
    logits = np.einsum("ce,ehw->chw", weights, feats.astype(np.float64, copy=False))
    logits += bias[:, None, None]
    return LogitsTensor(logits, kind="seg-logits")


def _axis_taps(src, dst):
    """Source indices and blend weight for each destination coordinate."""
    d = np.arange(dst, dtype=np.float64)
    s = (d + 0.5) * (src / dst) - 0.5
    s = np.clip(s, 0.0, src - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, s - i0


def _check_target(shape, target_h, target_w):
    _, h, w = shape
    if target_h < h or target_w < w:
        raise UpsampleError(
            f"cannot upsample {h}x{w} to {target_h}x{target_w}: downscaling requested"
        )


def _bands(src, target_h, target_w):
    """Yield (row_slice, upsampled float64 band) for a K x h x w array."""
    _, h, w = src.shape
    ys = _axis_taps(h, target_h)
    y0, y1, wy = ys
    x0, x1, wx = _axis_taps(w, target_w)
    src = src.astype(np.float64, copy=False)
    for r0 in range(0, target_h, BAND_ROWS):
        r1 = min(r0 + BAND_ROWS, target_h)
        a = wy[r0:r1, None]
        rows = src[:, y0[r0:r1], :] * (1.0 - a) + src[:, y1[r0:r1], :] * a
        band = rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx
        yield slice(r0, r1), band


def bilinear_upsample(t, target_h, target_w):
    """Bilinear resize with half-pixel centers and edge clamping.

    Destination pixel ``d`` samples source coordinate
    ``(d + 0.5) * src / dst - 0.5`` clamped to ``[0, src - 1]``, separably in
    y and x. Only enlargement (or identity) is allowed.
    """
    src = _as_array(t)
    kind = t.kind if isinstance(t, LogitsTensor) else "seg-logits"
    _check_target(src.shape, target_h, target_w)
    out = np.empty((src.shape[0], target_h, target_w), dtype=np.float64)
    for rows, band in _bands(src, target_h, target_w):
        out[:, rows, :] = band
    return LogitsTensor(out, kind=kind)


def softmax(logits, axis=0):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def linear_fuse(seg_logits, target_h, target_w):
    """Upsample C x h x w logits, softmax per pixel, keep argmax and its score."""
    src = _as_array(seg_logits)
    if src.ndim != 3 or src.shape[0] < 2:
        raise ShapeMismatchError(f"segmentation logits must be C x h x w with C >= 2, got {src.shape}")
    _check_target(src.shape, target_h, target_w)
    classes = np.empty((target_h, target_w), dtype=np.uint8)
    conf = np.empty((target_h, target_w), dtype=np.float64)
    for rows, band in _bands(src, target_h, target_w):
        shifted = band - band.max(axis=0, keepdims=True)
        np.exp(shifted, out=shifted)
        total = shifted.sum(axis=0)
        # np.argmax returns the first maximum: ties resolve to the lowest id
        classes[rows] = np.argmax(shifted, axis=0)
        # the winning entry is exp(0) == 1, so its probability is 1 / total
        conf[rows] = 1.0 / total
    class_count = src.shape[0]
    return FusedPrediction(ClassMap(classes, class_count), ConfidenceMap(conf))


def class_scores(class_logits):
    """Softmax over C+1 entries per row, with the trailing no-object column dropped."""
    logits = _as_array(class_logits)
    if logits.ndim == 3 and logits.shape[2] == 1:
        logits = logits[:, :, 0]
    if logits.ndim != 2 or logits.shape[1] < 3:
        raise ShapeMismatchError(
            f"class logits must be N x (C+1) with C >= 2, got {logits.shape}"
        )
    return softmax(logits, axis=1)[:, :-1]


def mask2former_fuse(mask_logits, class_logits, target_h, target_w):
    """Fuse mask and class logits of a mask-classification decoder.

    Per pixel the class score is ``sum_n sigmoid(M'[n]) * P_C[n, c]`` where
    ``M'`` are the upsampled mask logits. The sum is not normalized over
    classes, so the reported confidence is clamped to 1; the argmax is
    unaffected.
    """
    masks = _as_array(mask_logits)
    if masks.ndim != 3:
        raise ShapeMismatchError(f"mask logits must be N x h x w, got {masks.shape}")
    if masks.shape[0] < 1:
        raise ValidationError("mask-classification fusion needs at least one mask")
    pc = class_scores(class_logits)
    if pc.shape[0] != masks.shape[0]:
        raise ShapeMismatchError(
            f"{masks.shape[0]} masks but {pc.shape[0]} class-logit rows"
        )
    _check_target(masks.shape, target_h, target_w)
    classes = np.empty((target_h, target_w), dtype=np.uint8)
    conf = np.empty((target_h, target_w), dtype=np.float64)
    pc_t = np.ascontiguousarray(pc.T)
    for rows, band in _bands(masks, target_h, target_w):
        pm = sigmoid(band)
        fused = np.tensordot(pc_t, pm, axes=(1, 0))
        classes[rows] = np.argmax(fused, axis=0)
        conf[rows] = np.minimum(fused.max(axis=0), 1.0)
    return FusedPrediction(ClassMap(classes, pc.shape[1]), ConfidenceMap(conf))


def fused_scores(mask_logits, class_logits, target_h, target_w):
    """Full C x H x W class-score tensor before argmax (small inputs only)."""
    masks = bilinear_upsample(mask_logits, target_h, target_w).data
    pc = class_scores(class_logits)
    return np.tensordot(pc.T, sigmoid(masks), axes=(1, 0))


def quantize_confidence(conf):
    """Map confidences in [0, 1] to 8-bit levels, rounding halves up.

    Inputs are non-negative, so rounding half up equals rounding half away
    from zero.
    """
    scores = conf.scores if isinstance(conf, ConfidenceMap) else np.asarray(conf, dtype=np.float64)
    return np.floor(scores * 255.0 + 0.5).astype(np.uint8)


def dequantize_confidence(levels):
    return ConfidenceMap.from_levels(levels)
