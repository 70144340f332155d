"""File formats: binary tensors, 8-bit PNG rasters, and JSON manifests.

Tensor files ("BTEN") are laid out as::

    offset 0   4 bytes   magic b"BTEN"
    offset 4   1 byte    version (1)
    offset 5   1 byte    dtype (1 = float32)
    offset 6   1 byte    rank (2 or 3)
    offset 7   4*rank    extents, uint32 little-endian
    then                 row-major float32 little-endian payload

Rank-2 files hold class logits (N x (C+1)); they load as ``N x (C+1) x 1``
tensors and are written back as rank 2.
"""

import json
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .core import ClassMap, ConfidenceMap, LogitsTensor, ValidityMask
from .errors import (
    BadMagicError,
    BitDepthError,
    ChannelCountError,
    DuplicateIdError,
    FormatError,
    LabelRangeError,
    NonFiniteDataError,
    SchemaError,
    ScoreRangeError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)
from .fusion import quantize_confidence

MAGIC = b"BTEN"
VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sBBB")

SCHEMA_ID = "bravoeval/manifest/v1"


def encode_tensor(array):
    array = np.asarray(array)
    if array.ndim not in (2, 3):
        raise FormatError(f"tensor files hold rank 2 or 3, got rank {array.ndim}")
    if not np.isfinite(array).all():
        raise NonFiniteDataError("refusing to write non-finite values")
    head = HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(buf, path=None):
    """Parse a tensor file image into a float32 array of rank 2 or 3."""
    if len(buf) < HEADER.size:
        raise TruncatedPayloadError(f"header needs {HEADER.size} bytes, file has {len(buf)}", path, len(buf))
    magic, version, dtype, rank = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", path, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", path, 4)
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}", path, 5)
    if rank not in (2, 3):
        raise FormatError(f"rank {rank} not in {{2, 3}}", path, 6)
    start = HEADER.size + 4 * rank
    if len(buf) < start:
        raise TruncatedPayloadError("extents cut short", path, len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, HEADER.size)
    if 0 in shape:
        raise FormatError(f"zero extent in {shape}", path, HEADER.size)
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    have = len(buf) - start
    if have < expected:
        raise TruncatedPayloadError(
            f"payload is {have} bytes, extents {shape} need {expected}", path, len(buf)
        )
    if have > expected:
        raise FormatError(f"{have - expected} trailing bytes after payload", path, start + expected)
    data = np.frombuffer(buf, dtype="<f4", offset=start, count=expected // 4)
    finite = np.isfinite(data)
    if not finite.all():
        i = int(np.flatnonzero(~finite)[0])
        raise NonFiniteDataError(f"non-finite value at element {i}", path, start + 4 * i)
    return data.astype(np.float32).reshape(shape)


def read_tensor_array(path):
    path = Path(path)
    return decode_tensor(path.read_bytes(), path)


def read_tensor(path, kind=None):
    """Load a tensor file as a :class:`LogitsTensor`."""
    array = read_tensor_array(path)
    if array.ndim == 2:
        return LogitsTensor(array[:, :, None], kind="class-logits")
    return LogitsTensor(array, kind=kind or "seg-logits")


def write_tensor(t, path):
    if isinstance(t, LogitsTensor):
        array = t.data
        if t.kind == "class-logits" and array.shape[2] == 1:
            array = array[:, :, 0]
    else:
        array = np.asarray(t)
    Path(path).write_bytes(encode_tensor(array))


def read_png_levels(path):
    """Decode an 8-bit single-channel PNG into a uint8 array."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise FormatError(f"cannot decode image: {exc}", path) from exc
    if img.format != "PNG":
        raise FormatError(f"expected PNG, got {img.format}", path)
    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if mode in ("1",) or mode.startswith("I") or mode == "F":
        raise BitDepthError(f"expected 8-bit samples, got PIL mode {mode}", path)
    raise ChannelCountError(f"expected one grayscale channel, got PIL mode {mode}", path)


def write_png_levels(levels, path):
    levels = np.asarray(levels)
    if levels.dtype != np.uint8 or levels.ndim != 2:
        raise FormatError(f"need a 2-D uint8 raster, got {levels.dtype} {levels.shape}", path)
    Image.fromarray(levels).save(Path(path), format="PNG")


def read_class_map(path, class_count=19):
    levels = read_png_levels(path)
    try:
        return ClassMap(levels, class_count)
    except LabelRangeError as exc:
        raise LabelRangeError(f"{path}: {exc}") from exc


def read_confidence_map(path):
    """8-bit PNG (level / 255) or a full-precision tensor file."""
    path = Path(path)
    if path.suffix == ".bten":
        array = read_tensor_array(path)
        if array.ndim == 3 and array.shape[0] == 1:
            array = array[0]
        if array.ndim != 2:
            raise FormatError(f"confidence tensor must be H x W or 1 x H x W, got {array.shape}", path)
        try:
            return ConfidenceMap(array.astype(np.float64))
        except ScoreRangeError as exc:
            raise ScoreRangeError(f"{path}: {exc}") from exc
    return ConfidenceMap.from_levels(read_png_levels(path))


def read_validity_mask(path):
    return ValidityMask(read_png_levels(path) != 0)


def write_class_map(cm, path):
    write_png_levels(cm.labels, path)


def write_confidence_map(conf, path):
    levels = conf.levels if conf.levels is not None else quantize_confidence(conf)
    write_png_levels(levels, path)


def write_validity_mask(mask, path):
    write_png_levels(np.where(mask.valid, 255, 0).astype(np.uint8), path)


def png_size(path):
    """(height, width) from the PNG header without decoding pixels."""
    with Image.open(path) as img:
        return img.height, img.width


@dataclass(frozen=True)
class ManifestItem:
    subset: str
    id: str
    gt: Path
    validity: Path = None
    pred: Path = None
    conf: Path = None
    decoder: str = None
    seg_logits: Path = None
    mask_logits: Path = None
    class_logits: Path = None

    @property
    def has_maps(self):
        return self.pred is not None and self.conf is not None

    @property
    def has_logits(self):
        return self.decoder is not None


@dataclass
class Manifest:
    class_count: int
    subsets: dict = field(default_factory=dict)
    path: Path = None

    def items(self):
        """All items in subset-then-id order (the reduction order)."""
        for name in self.subsets:
            yield from sorted(self.subsets[name], key=lambda it: it.id)

    def __len__(self):
        return sum(len(v) for v in self.subsets.values())


def manifest_schema():
    text = resources.files("bravoeval").joinpath("schemas/manifest.schema.json").read_text()
    return json.loads(text)


def _pointer(parts):
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def parse_manifest(doc, base_dir=".", path=None):
    validator = jsonschema.Draft202012Validator(manifest_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise SchemaError(err.message, _pointer(err.absolute_path), path)
    base = Path(base_dir)

    def resolve(p):
        return None if p is None else (base / p)

    manifest = Manifest(class_count=doc["class_count"], path=Path(path) if path else None)
    for si, subset in enumerate(doc["subsets"]):
        name = subset["name"]
        if name in manifest.subsets:
            raise SchemaError(f"subset {name!r} listed twice", f"/subsets/{si}/name", path)
        seen = set()
        items = []
        for ii, raw in enumerate(subset["items"]):
            if raw["id"] in seen:
                raise DuplicateIdError(
                    f"duplicate item id {raw['id']!r} in subset {name!r}",
                    f"/subsets/{si}/items/{ii}/id",
                    path,
                )
            seen.add(raw["id"])
            logits = raw.get("logits", {})
            items.append(
                ManifestItem(
                    subset=name,
                    id=raw["id"],
                    gt=resolve(raw["gt"]),
                    validity=resolve(raw.get("validity")),
                    pred=resolve(raw.get("pred")),
                    conf=resolve(raw.get("conf")),
                    decoder=logits.get("decoder"),
                    seg_logits=resolve(logits.get("seg_logits")),
                    mask_logits=resolve(logits.get("mask_logits")),
                    class_logits=resolve(logits.get("class_logits")),
                )
            )
        manifest.subsets[name] = items
    return manifest


def load_manifest(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read manifest: {exc.strerror}", "", path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", "", path) from exc
    return parse_manifest(doc, path.parent, path)


def manifest_document(class_count, subsets, base_dir):
    """Build a manifest document from ``{subset: [item dict, ...]}``.

    Path values may be absolute; they are stored relative to ``base_dir``.
    """
    base = Path(base_dir).resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    out = {"$schema": SCHEMA_ID, "version": 1, "class_count": class_count, "subsets": []}
    for name, items in subsets.items():
        entries = []
        for item in items:
            entry = {}
            for key, value in item.items():
                if key == "logits":
                    entry[key] = {k: (v if k == "decoder" else rel(v)) for k, v in value.items()}
                elif key == "id":
                    entry[key] = value
                else:
                    entry[key] = rel(value)
            entries.append(entry)
        out["subsets"].append({"name": name, "items": entries})
    return out


def write_manifest(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
