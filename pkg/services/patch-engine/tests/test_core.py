"""
Tests for the patch data model, lineage, schemas and the record codec.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add service root to path
sys.path.append(str(Path(__file__).parent.parent))

from app.core import (
    BoundingBox,
    Frame,
    LineageRef,
    LineageStep,
    MetaTag,
    Patch,
    PatchSchema,
    SourceKind,
    base_frames_of,
    check_schema,
    decode_patch,
    derive_patch,
    encode_patch,
    make_patch,
    params_digest,
)
from app.errors import InvalidPatchError, MalformedLineageError, RegionOutOfBoundsError


def _frame(frame_no=3, width=8, height=6, video_id="cam"):
    pixels = np.arange(width * height * 3, dtype=np.uint8).reshape(height, width, 3)
    return Frame(video_id, frame_no, pixels)


def test_bounding_box_rejects_degenerate():
    with pytest.raises(ValueError):
        BoundingBox(2, 2, 2, 5)
    with pytest.raises(ValueError):
        BoundingBox(-1, 0, 3, 3)


def test_bounding_box_geometry():
    a = BoundingBox(0, 0, 4, 4)
    b = BoundingBox(2, 2, 6, 6)
    assert a.intersects(b)
    assert not a.intersects(BoundingBox(4, 0, 8, 4))
    assert BoundingBox(0, 0, 10, 10).contains(b)
    assert a.iou(b) == pytest.approx(4 / 28)


def test_frame_pixels_are_read_only():
    frame = _frame()
    with pytest.raises(ValueError):
        frame.pixels[0, 0, 0] = 1


def test_frame_rejects_wrong_dtype():
    with pytest.raises(ValueError):
        Frame("cam", 0, np.zeros((2, 2, 3), dtype=np.float32))


def test_make_patch_crops_and_tags():
    frame = _frame()
    region = BoundingBox(1, 2, 4, 5)
    patch = make_patch(frame, region, {"label": "car"})
    assert patch.shape == (3, 3, 3)
    np.testing.assert_array_equal(patch.array, frame.pixels[2:5, 1:4, :].astype(np.float32))
    assert patch.frameno == 3
    assert patch.bbox == region
    assert patch.label == "car"
    assert patch.lineage.depth == 1
    assert base_frames_of(patch) == [("cam", 3)]
    assert patch.video_id == "cam"


def test_make_patch_outside_frame():
    with pytest.raises(RegionOutOfBoundsError):
        make_patch(_frame(), BoundingBox(5, 0, 9, 2))


def test_patch_ids_are_deterministic():
    frame = _frame()
    region = BoundingBox(0, 0, 2, 2)
    assert make_patch(frame, region).patch_id == make_patch(frame, region).patch_id
    assert make_patch(frame, region).patch_id != make_patch(frame, BoundingBox(0, 0, 2, 3)).patch_id


def test_derive_patch_extends_lineage_and_merges_metadata():
    parent = make_patch(_frame(), BoundingBox(0, 0, 4, 4), {"label": "car", "score": 0.5})
    child = derive_patch(parent, "hist", np.ones(6), {"score": 0.9})
    assert child.lineage.depth == 2
    assert child.lineage.chain[0].source_id == parent.patch_id
    assert child.shape == (6,)
    assert child.is_feature
    assert child.get("score") == 0.9
    assert child.label == "car"
    assert child.bbox == parent.bbox
    assert base_frames_of(child) == [("cam", 3)]
    assert child.patch_id != parent.patch_id


def test_derive_patch_keeps_data_when_none():
    parent = make_patch(_frame(), BoundingBox(0, 0, 2, 2))
    child = derive_patch(parent, "tag", None, {"label": "x"})
    assert child.shape == parent.shape
    np.testing.assert_array_equal(child.data, parent.data)


def test_reserved_key_tag_is_enforced():
    parent = make_patch(_frame(), BoundingBox(0, 0, 2, 2))
    with pytest.raises(InvalidPatchError):
        derive_patch(parent, "bad", None, {"label": 7})


def test_shape_must_match_data():
    base = make_patch(_frame(), BoundingBox(0, 0, 2, 2))
    with pytest.raises(InvalidPatchError):
        Patch(1, base.lineage, np.zeros(5), (2, 2))


def test_lineage_without_base_is_malformed():
    step = LineageStep("hist", SourceKind.PATCH, 42)
    patch = Patch(1, LineageRef((step,)), np.zeros(2), (2,))
    with pytest.raises(MalformedLineageError):
        base_frames_of(patch)
    with pytest.raises(MalformedLineageError):
        encode_patch(patch)


def test_patch_record_round_trip():
    parent = make_patch(_frame(), BoundingBox(1, 1, 5, 4), {"label": "car", "tags": ["a", "b"]})
    child = derive_patch(parent, "hist", np.linspace(0, 1, 24), {"depth": 0.25}, params_digest=99)
    assert decode_patch(encode_patch(child)) == child


def test_truncated_record_is_rejected():
    record = encode_patch(make_patch(_frame(), BoundingBox(0, 0, 2, 2)))
    with pytest.raises(InvalidPatchError):
        decode_patch(record[:-3])


def test_params_digest_ignores_key_order():
    assert params_digest("hist", {"bins": 8, "space": "rgb"}) == params_digest("hist", {"space": "rgb", "bins": 8})
    assert params_digest("hist", {"bins": 8}) != params_digest("hist", {"bins": 16})


def test_check_schema():
    patch = make_patch(_frame(), BoundingBox(0, 0, 2, 2), {"label": "car"})
    assert check_schema(patch, PatchSchema.pixels(["car", "person"]))
    assert not check_schema(patch, PatchSchema.pixels(["person"]))
    assert not check_schema(patch, PatchSchema(data_shape=[24]))
    assert not check_schema(patch, PatchSchema(required_keys={"depth": MetaTag.FLOAT}))
