"""Raster and tensor types shared across the engine.

All rasters are row-major with the origin at the top-left pixel, matching
PNG scan order. Instances are immutable: the wrapped arrays are copied on
construction and flagged read-only, so they can be handed to any number of
readers without locking.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    LabelRangeError,
    NonFiniteError,
    ScoreRangeError,
    ShapeMismatchError,
    ValidationError,
)

IGNORE_ID = 255
CITYSCAPES_CLASSES = 19

TENSOR_KINDS = ("seg-logits", "mask-logits", "class-logits", "features")


def _frozen(array, dtype=None):
    out = np.array(array, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ClassCatalog:
    class_count: int = CITYSCAPES_CLASSES
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        if int(self.class_count) < 2:
            raise ValidationError(f"class_count must be >= 2, got {self.class_count}")
        if 0 <= self.ignore_id < self.class_count:
            raise ValidationError(
                f"ignore_id {self.ignore_id} collides with class ids 0..{self.class_count - 1}"
            )
        if self.class_count > 255:
            raise ValidationError("class ids must fit in an 8-bit label map")


@dataclass(frozen=True, eq=False)
class LogitsTensor:
    """Rank-3 float tensor (channels, height, width).

    Class logits of a mask-classification decoder are stored as
    ``N x (C+1) x 1``.
    """

    data: np.ndarray
    kind: str = "seg-logits"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeMismatchError(f"logits tensor must be rank 3, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeMismatchError(f"logits tensor extents must be positive, got {data.shape}")
        if self.kind not in TENSOR_KINDS:
            raise ValidationError(f"unknown tensor kind {self.kind!r}")
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            bad = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
            raise NonFiniteError(f"non-finite value at flat index {bad}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, LogitsTensor):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ClassMap:
    labels: np.ndarray
    class_count: int = CITYSCAPES_CLASSES

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeMismatchError(f"class map must be 2-D, got shape {labels.shape}")
        if labels.dtype.kind not in "iub":
            raise LabelRangeError(f"class map must hold integers, got {labels.dtype}")
        bad = ((labels < 0) | (labels >= self.class_count)) & (labels != IGNORE_ID)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise LabelRangeError(
                f"label {int(labels[y, x])} at (row {y}, col {x}) is neither "
                f"< {self.class_count} nor {IGNORE_ID}"
            )
        object.__setattr__(self, "labels", _frozen(labels, np.uint8))

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        if not isinstance(other, ClassMap):
            return NotImplemented
        return self.class_count == other.class_count and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    """Per-pixel confidence in [0, 1].

    ``levels`` caches the 8-bit quantization when the map was decoded from an
    8-bit source, so accumulation can skip re-quantizing.
    """

    scores: np.ndarray
    levels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ShapeMismatchError(f"confidence map must be 2-D, got shape {scores.shape}")
        if not np.isfinite(scores).all():
            raise NonFiniteError("confidence map contains NaN or Inf")
        bad = (scores < 0.0) | (scores > 1.0)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ScoreRangeError(
                f"confidence {scores[y, x]!r} at (row {y}, col {x}) outside [0, 1]"
            )
        object.__setattr__(self, "scores", _frozen(scores))
        if self.levels is not None:
            levels = np.asarray(self.levels)
            if levels.shape != scores.shape:
                raise ShapeMismatchError("levels and scores differ in shape")
            object.__setattr__(self, "levels", _frozen(levels, np.uint8))

    @classmethod
    def from_levels(cls, levels):
        levels = np.asarray(levels, dtype=np.uint8)
        return cls(levels / 255.0, levels=levels)

    @property
    def shape(self):
        return self.scores.shape

    def __eq__(self, other):
        if not isinstance(other, ConfidenceMap):
            return NotImplemented
        return np.array_equal(self.scores, other.scores)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ValidityMask:
    valid: np.ndarray

    def __post_init__(self):
        valid = np.asarray(self.valid)
        if valid.ndim != 2:
            raise ShapeMismatchError(f"validity mask must be 2-D, got shape {valid.shape}")
        object.__setattr__(self, "valid", _frozen(valid, bool))

    @classmethod
    def all_valid(cls, shape):
        return cls(np.ones(shape, dtype=bool))

    @property
    def shape(self):
        return self.valid.shape

    def __eq__(self, other):
        if not isinstance(other, ValidityMask):
            return NotImplemented
        return np.array_equal(self.valid, other.valid)

    __hash__ = None


@dataclass(frozen=True)
class EvalUnit:
    """A prediction/ground-truth quadruple whose rasters are known to agree."""

    pred: ClassMap
    conf: ConfidenceMap
    gt: ClassMap
    validity: ValidityMask

    @property
    def shape(self):
        return self.gt.shape


def validate_pair(pred, conf, gt, validity=None):
    """Check that four rasters form one evaluation unit.

    ``validity`` may be omitted, in which case every pixel is valid. The
    prediction must only contain real class ids: the ignore label is
    meaningful for ground truth, not for a model output.

    Raises
    ------
    DimensionMismatchError
        Names the first raster whose extents differ from ``gt``.
    LabelRangeError, ScoreRangeError
        If a raster violates its value invariant.
    """
    if validity is None:
        validity = ValidityMask.all_valid(gt.shape)
    for name, raster in (("pred", pred), ("conf", conf), ("validity", validity)):
        if raster.shape != gt.shape:
            raise DimensionMismatchError(name, gt.shape, raster.shape)
    if pred.class_count != gt.class_count:
        raise LabelRangeError(
            f"pred uses {pred.class_count} classes but gt uses {gt.class_count}"
        )
    if (pred.labels == IGNORE_ID).any():
        y, x = np.argwhere(pred.labels == IGNORE_ID)[0]
        raise LabelRangeError(f"pred holds the ignore label at (row {y}, col {x})")
    return EvalUnit(pred=pred, conf=conf, gt=gt, validity=validity)
