"""
Tests for generators, transformers, pipeline validation and materialized
collections.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add service root to path
sys.path.append(str(Path(__file__).parent.parent))

from app.core import BoundingBox, Frame, MetaTag, base_frames_of
from app.errors import DuplicatePatchError, PlanValidationError, ShapeError
from app.etl import (
    DedupSpec,
    FilterSpec,
    GeneratorSpec,
    IndexSpec,
    PaletteEntry,
    SimilarityJoinSpec,
    TransformerSpec,
    build_collection,
    check_pipeline,
    color_histogram,
    decode_glyph,
    encode_glyph,
    find_glyph,
    generate,
    materialize,
    open_collection,
    output_schema,
    run_pipeline,
    transform,
    validate_pipeline,
)
from app.storage import IoCounters

RED = PaletteEntry(r=240, g=16, b=16, label="car")
GREEN = PaletteEntry(r=16, g=240, b=16, label="person")


def _scene_frame(frame_no=0, video_id="cam"):
    """A red 20x10 box, a green 12x12 box and a tiny red speck on grey."""
    pixels = np.full((60, 80, 3), 100, dtype=np.uint8)
    pixels[10:20, 5:25] = RED.rgb
    pixels[30:42, 50:62] = GREEN.rgb
    pixels[50:52, 70:72] = RED.rgb
    return Frame(video_id, frame_no, pixels)


def _blob_spec(**overrides):
    params = {"kind": "blob_detector", "palette": [RED, GREEN], "min_area": 50}
    params.update(overrides)
    return GeneratorSpec(**params)


def test_whole_image_covers_the_frame():
    patches = list(generate([_scene_frame()], GeneratorSpec(kind="whole_image")))
    assert len(patches) == 1
    assert patches[0].bbox == BoundingBox(0, 0, 80, 60)
    assert patches[0].get("frame_height") == 60


def test_tiles_drop_ragged_remainder():
    patches = list(generate([_scene_frame()], GeneratorSpec(kind="tiles", tile_w=30, tile_h=25)))
    assert [p.bbox.as_tuple() for p in patches] == [(0, 0, 30, 25), (30, 0, 60, 25), (0, 25, 30, 50), (30, 25, 60, 50)]
    assert all(p.shape == (25, 30, 3) for p in patches)


def test_tiles_need_sizes():
    with pytest.raises(ValueError):
        GeneratorSpec(kind="tiles", tile_w=10)


def test_blob_detector_finds_palette_components():
    patches = list(generate([_scene_frame()], _blob_spec()))
    found = sorted((p.label, p.bbox.as_tuple()) for p in patches)
    assert found == [("car", (5, 10, 25, 20)), ("person", (50, 30, 62, 42))]


def test_blob_detector_tolerance():
    frame = _scene_frame()
    assert list(generate([frame], _blob_spec(palette=[PaletteEntry(r=200, g=16, b=16, label="car")]))) == []
    loose = _blob_spec(palette=[PaletteEntry(r=200, g=16, b=16, label="car")], color_tolerance=40)
    assert [p.label for p in generate([frame], loose)] == ["car"]


def test_blob_detector_needs_palette():
    with pytest.raises(ValueError):
        GeneratorSpec(kind="blob_detector")


def test_label_noise_is_seeded():
    frames = [_scene_frame(n) for n in range(5)]
    flipped = list(generate(frames, _blob_spec(label_noise_p=1.0, seed=3)))
    assert all(
        p.label == ("person" if p.bbox.width == 20 else "car") for p in flipped
    )
    half = _blob_spec(label_noise_p=0.5, seed=11)
    assert [p.label for p in generate(frames, half)] == [p.label for p in generate(frames, half)]


def test_glyph_round_trip():
    strip = encode_glyph(0xA5C3)
    assert strip.shape == (4, 16, 3)
    assert decode_glyph(strip) == 0xA5C3
    with pytest.raises(ValueError):
        encode_glyph(70000)


def test_find_glyph_inside_a_panel():
    panel = np.full((10, 30, 3), 128, dtype=np.uint8)
    panel[3:7, 9:25] = encode_glyph(1234)
    assert find_glyph(panel) == (3, 9)
    assert find_glyph(np.full((10, 30, 3), 128, dtype=np.uint8)) is None


def test_glyph_reader_extracts_text():
    pixels = np.zeros((40, 60, 3), dtype=np.uint8)
    pixels[10:20, 10:40] = 128
    pixels[13:17, 12:28] = encode_glyph(40961)
    patches = list(generate([Frame("cam", 2, pixels)], GeneratorSpec(kind="glyph_reader")))
    assert len(patches) == 1
    assert patches[0].get("text") == "40961"
    assert patches[0].bbox == BoundingBox(12, 13, 28, 17)
    assert patches[0].frameno == 2


def test_color_histogram_bins():
    pixels = np.zeros((2, 2, 3), dtype=np.uint8)
    pixels[..., 0] = 255
    pixels[0, 0, 1] = 128
    hist = color_histogram(pixels, 4)
    assert hist.shape == (12,)
    np.testing.assert_allclose(hist[0:4], [0, 0, 0, 1])
    np.testing.assert_allclose(hist[4:8], [0.75, 0, 0.25, 0])
    np.testing.assert_allclose(hist[8:12], [1, 0, 0, 0])


def test_histogram_transformer_derives_features():
    blobs = list(generate([_scene_frame()], _blob_spec()))
    hists = list(transform(blobs, TransformerSpec(kind="color_histogram", bins_per_channel=8)))
    assert all(h.shape == (24,) for h in hists)
    assert all(h.lineage.depth == 2 for h in hists)
    assert [h.label for h in hists] == [b.label for b in blobs]
    assert all(h.get("hist_dims") == 24 for h in hists)


def test_depth_proxy_uses_box_bottom():
    blobs = list(generate([_scene_frame()], _blob_spec()))
    depths = {p.label: p.get("depth") for p in transform(blobs, TransformerSpec(kind="depth_proxy"))}
    assert depths["car"] == pytest.approx(1 - 20 / 60)
    assert depths["person"] == pytest.approx(1 - 42 / 60)


def test_transformer_rejects_feature_input():
    hists = transform(generate([_scene_frame()], _blob_spec()), TransformerSpec(kind="color_histogram"))
    with pytest.raises(ShapeError):
        list(transform(hists, TransformerSpec(kind="depth_proxy")))


def test_validate_accepts_well_typed_pipeline():
    stages = [
        _blob_spec(),
        TransformerSpec(kind="depth_proxy"),
        FilterSpec(key="label", value="car"),
        TransformerSpec(kind="color_histogram"),
        SimilarityJoinSpec(dim=24),
        IndexSpec(kind="hash", key="label"),
        IndexSpec(kind="balltree", dim=24),
    ]
    assert validate_pipeline(stages) == []
    schema = check_pipeline(stages)
    assert schema.data_shape == [24]
    assert schema.label_domain == ["car"]
    assert schema.required_keys["depth"] is MetaTag.FLOAT


def test_validate_reports_every_violation():
    stages = [
        _blob_spec(),
        FilterSpec(key="label", value="truck"),
        SimilarityJoinSpec(dim=24),
        TransformerSpec(kind="color_histogram", bins_per_channel=4),
        SimilarityJoinSpec(dim=24),
        IndexSpec(kind="ordered", key="label"),
    ]
    violations = validate_pipeline(stages)
    assert len(violations) == 4
    assert violations[0].startswith("stage 1 (filter")
    assert "not producible" in violations[0]
    assert "needs feature vectors" in violations[1]
    assert "shape mismatch" in violations[2]
    assert violations[3].startswith("stage 5 (ordered index on label)")


def test_pipeline_must_start_with_generator():
    assert validate_pipeline([]) != []
    violations = validate_pipeline([TransformerSpec(kind="color_histogram")])
    assert violations == ["stage 0 (color_histogram): pipeline must begin with a generator"]
    with pytest.raises(PlanValidationError) as info:
        check_pipeline([_blob_spec(), _blob_spec()])
    assert len(info.value.violations) == 1


def test_depth_proxy_needs_pixels_and_boxes():
    stages = [GeneratorSpec(kind="whole_image"), TransformerSpec(kind="color_histogram"), TransformerSpec(kind="depth_proxy")]
    assert any("needs pixel data" in v for v in validate_pipeline(stages))


def test_dedup_collect_adds_group_key():
    stages = [_blob_spec(), TransformerSpec(kind="color_histogram"), DedupSpec(collect="label")]
    assert validate_pipeline(stages) == []
    assert output_schema(stages).required_keys["group_label"] is MetaTag.STRING_LIST
    assert validate_pipeline(stages + [FilterSpec(key="group_label", value="car", op="contains")]) == []


def test_materialize_round_trip(tmp_path):
    frames = [_scene_frame(n) for n in range(4)]
    patches = list(run_pipeline(frames, _blob_spec(), [TransformerSpec(kind="color_histogram")]))
    coll = materialize(iter(patches), str(tmp_path / "hist.patches"), name="hist")
    assert len(coll) == 8
    counters = IoCounters()
    assert list(coll.scan(counters)) == patches
    assert counters.records_read == 8

    reopened = open_collection(str(tmp_path / "hist.patches"))
    assert len(reopened) == 8
    assert reopened.info.name == "hist"
    assert reopened.get(patches[3].patch_id) == patches[3]
    assert reopened.get(12345) is None
    wanted = [patches[5].patch_id, 999, patches[1].patch_id]
    assert [p.patch_id for p in reopened.get_many(wanted)] == [patches[5].patch_id, patches[1].patch_id]


def test_forward_lineage_groups_by_frame(tmp_path):
    frames = [_scene_frame(n) for n in range(3)]
    coll = build_collection(frames, _blob_spec(), [], str(tmp_path / "blobs.patches"))
    lineage = coll.forward_lineage()
    assert [frame for frame, _ in lineage] == [("cam", 0), ("cam", 1), ("cam", 2)]
    assert all(len(ids) == 2 for _, ids in lineage)
    for pid in coll.patches_of_frame("cam", 1):
        assert base_frames_of(coll.get(pid)) == [("cam", 1)]


def test_materialize_rejects_duplicates(tmp_path):
    patches = list(generate([_scene_frame()], _blob_spec()))
    with pytest.raises(DuplicatePatchError):
        materialize(iter(patches + patches[:1]), str(tmp_path / "dup.patches"))


def test_rebuild_is_deterministic(tmp_path):
    frames = [_scene_frame(n) for n in range(3)]
    spec = _blob_spec(label_noise_p=0.3, seed=5)
    first = build_collection(frames, spec, [TransformerSpec(kind="color_histogram")], str(tmp_path / "a.patches"))
    second = build_collection(frames, spec, [TransformerSpec(kind="color_histogram")], str(tmp_path / "b.patches"))
    assert list(first.scan()) == list(second.scan())


def test_build_collection_validates_first(tmp_path):
    with pytest.raises(PlanValidationError):
        build_collection(
            [_scene_frame()],
            GeneratorSpec(kind="whole_image"),
            [TransformerSpec(kind="color_histogram"), TransformerSpec(kind="color_histogram")],
            str(tmp_path / "bad.patches"),
        )
