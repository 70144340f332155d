import json

import numpy as np
import pytest
from PIL import Image

from bravoeval.core import ClassMap, ConfidenceMap, LogitsTensor, ValidityMask
from bravoeval.errors import (
    BadMagicError,
    BitDepthError,
    ChannelCountError,
    DuplicateIdError,
    FormatError,
    LabelRangeError,
    NonFiniteDataError,
    SchemaError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)
from bravoeval.ingest import (
    decode_tensor,
    encode_tensor,
    load_manifest,
    manifest_document,
    parse_manifest,
    read_class_map,
    read_confidence_map,
    read_tensor,
    read_validity_mask,
    write_class_map,
    write_confidence_map,
    write_manifest,
    write_tensor,
    write_validity_mask,
)


# --- tensor files ------------------------------------------------------------

def test_header_bytes_2x3():
    buf = encode_tensor(np.zeros((2, 3), np.float32))
    assert buf[:15].hex(" ") == "42 54 45 4e 01 01 02 02 00 00 00 03 00 00 00"
    assert len(buf) == 15 + 6 * 4


def test_tensor_round_trip(tmp_path):
    data = np.random.default_rng(0).standard_normal((19, 64, 64)).astype(np.float32)
    path = tmp_path / "t.bten"
    write_tensor(LogitsTensor(data), path)
    back = read_tensor(path)
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == data.tobytes()


def test_class_logits_rank2_round_trip(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(4, 3)
    path = tmp_path / "c.bten"
    write_tensor(data, path)
    t = read_tensor(path)
    assert t.kind == "class-logits" and t.dims == (4, 3, 1)
    write_tensor(t, tmp_path / "c2.bten")
    assert (tmp_path / "c2.bten").read_bytes() == path.read_bytes()


def test_truncated_payload():
    buf = encode_tensor(np.ones((2, 3, 4), np.float32))
    with pytest.raises(TruncatedPayloadError) as err:
        decode_tensor(buf[:-5], "x.bten")
    assert "x.bten" in str(err.value)
    with pytest.raises(TruncatedPayloadError):
        decode_tensor(buf[:5])


def test_header_errors():
    buf = bytearray(encode_tensor(np.ones((2, 2), np.float32)))
    bad = bytearray(buf)
    bad[0:4] = b"NOPE"
    with pytest.raises(BadMagicError) as err:
        decode_tensor(bytes(bad))
    assert err.value.offset == 0
    bad = bytearray(buf)
    bad[4] = 2
    with pytest.raises(UnsupportedVersionError):
        decode_tensor(bytes(bad))
    bad = bytearray(buf)
    bad[5] = 7
    with pytest.raises(UnsupportedDtypeError):
        decode_tensor(bytes(bad))
    with pytest.raises(FormatError, match="trailing"):
        decode_tensor(bytes(buf) + b"\0")


def test_non_finite_payload_located():
    data = np.ones((1, 2, 2), np.float32)
    buf = bytearray(encode_tensor(data))
    nan = np.array([np.nan], "<f4").tobytes()
    start = 7 + 12
    buf[start + 8:start + 12] = nan
    with pytest.raises(NonFiniteDataError) as err:
        decode_tensor(bytes(buf))
    assert err.value.offset == start + 8
    with pytest.raises(NonFiniteDataError):
        encode_tensor(np.array([[np.inf]]))


# --- PNG maps ----------------------------------------------------------------

def test_class_map_png_ignore_label(tmp_path):
    labels = np.array([[0, 18], [255, 3]], np.uint8)
    write_class_map(ClassMap(labels), tmp_path / "gt.png")
    back = read_class_map(tmp_path / "gt.png")
    assert back == ClassMap(labels)
    assert back.labels[1, 0] == 255


def test_class_map_png_out_of_range(tmp_path):
    Image.fromarray(np.array([[40]], np.uint8)).save(tmp_path / "bad.png")
    with pytest.raises(LabelRangeError, match="bad.png"):
        read_class_map(tmp_path / "bad.png", 19)


def test_confidence_png_level_204(tmp_path):
    Image.fromarray(np.full((2, 2), 204, np.uint8)).save(tmp_path / "c.png")
    conf = read_confidence_map(tmp_path / "c.png")
    assert (conf.scores == 0.8).all()
    assert (conf.levels == 204).all()


def test_confidence_tensor_keeps_precision(tmp_path):
    data = np.array([[0.1234567, 0.5]], np.float32)
    write_tensor(data[None], tmp_path / "c.bten")
    conf = read_confidence_map(tmp_path / "c.bten")
    assert conf.levels is None
    assert conf.scores[0, 0] == np.float64(np.float32(0.1234567))


def test_confidence_round_trip_quantizes(tmp_path):
    conf = ConfidenceMap(np.array([[0.0, 0.5, 1.0, 0.8]]))
    write_confidence_map(conf, tmp_path / "c.png")
    assert read_confidence_map(tmp_path / "c.png").levels.tolist() == [[0, 128, 255, 204]]


def test_validity_png(tmp_path):
    mask = ValidityMask(np.array([[True, False]]))
    write_validity_mask(mask, tmp_path / "v.png")
    assert read_validity_mask(tmp_path / "v.png") == mask


def test_sixteen_bit_png_rejected(tmp_path):
    Image.fromarray(np.full((2, 2), 1000, np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(BitDepthError):
        read_confidence_map(tmp_path / "deep.png")


def test_rgb_png_rejected(tmp_path):
    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(ChannelCountError):
        read_class_map(tmp_path / "rgb.png")


def test_not_a_png(tmp_path):
    (tmp_path / "x.png").write_bytes(b"definitely not an image")
    with pytest.raises(FormatError):
        read_class_map(tmp_path / "x.png")


# --- manifests ---------------------------------------------------------------

def minimal():
    return {"class_count": 19, "subsets": [{"name": "acdc", "items": [{"id": "a", "gt": "a_gt.png", "pred": "a_pred.png", "conf": "a_conf.png"}]}]}


def test_minimal_manifest(tmp_path):
    m = parse_manifest(minimal(), tmp_path)
    assert len(m) == 1
    (item,) = m.items()
    assert item.subset == "acdc" and item.has_maps and not item.has_logits
    assert item.gt == tmp_path / "a_gt.png"


def test_duplicate_id_named():
    doc = minimal()
    doc["subsets"][0]["items"].append(dict(doc["subsets"][0]["items"][0]))
    with pytest.raises(DuplicateIdError) as err:
        parse_manifest(doc)
    assert "'a'" in str(err.value)
    assert err.value.pointer == "/subsets/0/items/1/id"


def test_mask2former_needs_class_logits():
    doc = minimal()
    doc["subsets"][0]["items"] = [{"id": "a", "gt": "g.png", "logits": {"decoder": "mask2former", "mask_logits": "m.bten"}}]
    with pytest.raises(SchemaError) as err:
        parse_manifest(doc)
    assert err.value.pointer.startswith("/subsets/0/items/0")


def test_pred_without_conf_rejected():
    doc = minimal()
    del doc["subsets"][0]["items"][0]["conf"]
    with pytest.raises(SchemaError):
        parse_manifest(doc)


def test_unknown_subset_and_bad_class_count():
    doc = minimal()
    doc["subsets"][0]["name"] = "kitti"
    with pytest.raises(SchemaError, match="/subsets/0/name"):
        parse_manifest(doc)
    doc = minimal()
    doc["class_count"] = 1
    with pytest.raises(SchemaError, match="/class_count"):
        parse_manifest(doc)


def test_items_sorted_by_id(tmp_path):
    doc = minimal()
    doc["subsets"][0]["items"] = [{"id": i, "gt": f"{i}.png", "pred": "p.png", "conf": "c.png"} for i in ("b", "c", "a")]
    assert [it.id for it in parse_manifest(doc).items()] == ["a", "b", "c"]


def test_manifest_document_round_trip(tmp_path):
    items = {"smiyc": [{"id": "x", "gt": tmp_path / "s" / "x_gt.png", "logits": {"decoder": "linear", "seg_logits": tmp_path / "s" / "x.bten"}}]}
    path = tmp_path / "manifest.json"
    write_manifest(manifest_document(19, items, tmp_path), path)
    doc = json.loads(path.read_text())
    assert doc["subsets"][0]["items"][0]["gt"] == "s/x_gt.png"
    (item,) = load_manifest(path).items()
    assert item.decoder == "linear"
    assert item.seg_logits.resolve() == (tmp_path / "s" / "x.bten").resolve()


def test_load_manifest_errors(tmp_path):
    with pytest.raises(SchemaError, match="cannot read"):
        load_manifest(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(SchemaError, match="invalid JSON"):
        load_manifest(tmp_path / "bad.json")
