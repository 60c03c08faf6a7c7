"""
Tests for predicates, operators, plan validation and execution. Index
and similarity joins are checked against the nested-loop join.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add service root to path
sys.path.append(str(Path(__file__).parent.parent))

from app.core import BoundingBox, Frame, derive_patch, make_patch
from app.errors import MissingBaseFrameError, PlanValidationError, TagMismatchError
from app.etl import GeneratorSpec, PaletteEntry, TransformerSpec, build_collection
from app.index import build_hash, save_index
from app.query import (
    Backtrace,
    BacktraceNode,
    BoxOverlap,
    Compare,
    CountBy,
    CountByNode,
    Dedup,
    DedupNode,
    EuclideanWithin,
    ExecOptions,
    IndexJoin,
    IndexJoinNode,
    IndexScanNode,
    NestedLoopJoin,
    PatchSource,
    Ref,
    ScanNode,
    Select,
    SelectNode,
    SimJoin,
    SimJoinNode,
    all_of,
    backtrace,
    cmp,
    dedup,
    eq,
    evaluate,
    execute,
    frame_of,
    run,
    sim_join,
    validate_plan,
)
from app.storage import CodecConfig, IoCounters, Layout, StoreDescriptor, ingest

RED = PaletteEntry(r=240, g=16, b=16, label="car")
GREEN = PaletteEntry(r=16, g=240, b=16, label="person")
FRAMES = 12


def _moving_frames(count=FRAMES, video_id="road"):
    for n in range(count):
        pixels = np.full((48, 96, 3), 90, dtype=np.uint8)
        pixels[5:15, 2 + 4 * n:22 + 4 * n] = RED.rgb
        if n % 2 == 0:
            pixels[25:37, 60:72] = GREEN.rgb
        yield Frame(video_id, n, pixels)


def _boxes(n=40, seed=4):
    rng = np.random.default_rng(seed)
    blank = np.zeros((64, 64, 3), dtype=np.uint8)
    out = []
    for i in range(n):
        frame = Frame("boxes", i, blank)
        x, y = (int(v) for v in rng.integers(0, 50, size=2))
        w, h = (int(v) for v in rng.integers(2, 14, size=2))
        meta = {"label": ["car", "person"][i % 2], "frameno_hint": int(i % 6), "depth": float(rng.random())}
        out.append(make_patch(frame, BoundingBox(x, y, x + w, y + h), meta))
    return out


def _vectors(n, d=3, seed=0, spread=1.0, video_id="vec"):
    rng = np.random.default_rng(seed)
    pixel = np.zeros((1, 1, 3), dtype=np.uint8)
    out = []
    for i, row in enumerate(rng.random((n, d)) * spread):
        base = make_patch(Frame(video_id, i, pixel), BoundingBox(0, 0, 1, 1), {"label": f"g{i % 3}"})
        out.append(derive_patch(base, "embed", row))
    return out


def _ids(tuples):
    return [tuple(p.patch_id for p in tup) for tup in tuples]


@pytest.fixture
def road(tmp_path):
    """A stored video, its blob collection and a histogram collection."""
    store = ingest(
        _moving_frames(),
        StoreDescriptor(layout=Layout.FRAME_FILE, path=str(tmp_path / "road.db"), video_id="road"),
    )
    blobs_spec = GeneratorSpec(kind="blob_detector", palette=[RED, GREEN], min_area=50)
    blobs = build_collection(_moving_frames(), blobs_spec, [], str(tmp_path / "blobs.patches"))
    hists = build_collection(
        _moving_frames(), blobs_spec, [TransformerSpec(kind="color_histogram")], str(tmp_path / "hists.patches")
    )
    return store, blobs, hists


def test_compare_and_missing_keys():
    patches = _boxes(6)
    assert evaluate(eq("label", "car"), (patches[0],))
    assert not evaluate(eq("label", "car"), (patches[1],))
    assert not evaluate(eq("absent", 3), (patches[0],))
    assert evaluate(Compare(left=Ref(key="bbox.x2"), cmp=">", value=patches[0].bbox.x1), (patches[0],))


def test_compare_tag_mismatch_raises():
    with pytest.raises(TagMismatchError):
        evaluate(eq("label", 3), (_boxes(1)[0],))


def test_compare_needs_one_operand():
    with pytest.raises(ValueError):
        Compare(left=Ref(key="a"), value=1, right=Ref(key="b"))


def test_select_streams_matching_tuples():
    patches = _boxes()
    out = list(Select(PatchSource(patches), eq("label", "person"), batch=7))
    assert [t[0] for t in out] == [p for p in patches if p.label == "person"]


def test_nested_loop_join_order_and_offset():
    left, right = _boxes(10, seed=1), _boxes(12, seed=2)
    pred = cmp((0, "depth"), ">", (1, "depth"), offset=0.2)
    out = list(NestedLoopJoin(PatchSource(left), PatchSource(right), pred))
    want = [(a.patch_id, b.patch_id) for a in left for b in right if a.get("depth") > b.get("depth") + 0.2]
    assert _ids(out) == want


def test_hash_index_join_matches_nested_loop():
    left, right = _boxes(30, seed=1), _boxes(30, seed=2)
    pred = cmp((0, "frameno_hint"), "=", (1, "frameno_hint"))
    nested = list(NestedLoopJoin(PatchSource(left), PatchSource(right), pred))
    joined = list(IndexJoin(PatchSource(left), PatchSource(right), "hash", left_key="frameno_hint"))
    assert _ids(joined) == _ids(nested)


def test_ordered_range_join_matches_nested_loop():
    left, right = _boxes(25, seed=3), _boxes(25, seed=5)
    pred = all_of(
        cmp((1, "bbox.x1"), ">=", (0, "bbox.x1"), offset=-3),
        cmp((1, "bbox.x1"), "<", (0, "bbox.x1"), offset=3),
    )
    nested = list(NestedLoopJoin(PatchSource(left), PatchSource(right), pred))
    op = IndexJoin(PatchSource(left), PatchSource(right), "ordered", left_key="bbox.x1", lo_offset=-3, hi_offset=3)
    joined = list(op)
    assert sorted(_ids(joined)) == sorted(_ids(nested))
    assert op.stats.index_probes == 25


def test_rtree_join_with_residual_matches_nested_loop():
    left, right = _boxes(30, seed=6), _boxes(30, seed=7)
    overlap = BoxOverlap(left=Ref(pos=0, key="bbox"), right=Ref(pos=1, key="bbox"))
    residual = eq("label", "car", pos=1)
    nested = list(NestedLoopJoin(PatchSource(left), PatchSource(right), all_of(overlap, residual)))
    joined = list(IndexJoin(PatchSource(left), PatchSource(right), "rtree", residual=residual, capacity=4))
    assert _ids(joined) == _ids(nested)


def test_balltree_index_join_matches_nested_loop():
    left, right = _vectors(40, seed=1), _vectors(50, seed=2, video_id="other")
    nested = list(NestedLoopJoin(PatchSource(left), PatchSource(right), EuclideanWithin(left=0, right=1, tau=0.25)))
    joined = list(IndexJoin(PatchSource(left), PatchSource(right), "balltree", tau=0.25, leaf_size=4))
    assert _ids(joined) == _ids(nested)


@pytest.mark.parametrize("build_side", ["auto", "left", "right"])
def test_sim_join_matches_nested_loop(build_side):
    left, right = _vectors(60, seed=3), _vectors(45, seed=4, video_id="other")
    nested = list(NestedLoopJoin(PatchSource(left), PatchSource(right), EuclideanWithin(left=0, right=1, tau=0.2)))
    op = SimJoin(PatchSource(left), PatchSource(right), 0.2, build_side=build_side, probe_batch=8, leaf_size=4)
    joined = list(op)
    assert sorted(_ids(joined)) == sorted(_ids(nested))
    assert all(a.video_id == "vec" and b.video_id == "other" for a, b in joined)
    assert op.built_on == ("right" if build_side == "auto" else build_side)


def test_sim_join_helper_and_empty_sides():
    assert sim_join([], _vectors(3), 1.0) == []
    pairs = sim_join(_vectors(5, seed=1), _vectors(5, seed=1), 0.0)
    assert [(a.get("label"), b.get("label")) for a, b in pairs] == [(f"g{i % 3}", f"g{i % 3}") for i in range(5)]


def test_dedup_keeps_first_of_each_cluster():
    centres = [np.array([0.0, 0.0]), np.array([5.0, 5.0]), np.array([0.0, 9.0])]
    pixel = np.zeros((1, 1, 3), dtype=np.uint8)
    patches = []
    for i in range(30):
        base = make_patch(Frame("d", i, pixel), BoundingBox(0, 0, 1, 1), {"label": f"c{i % 3}"})
        patches.append(derive_patch(base, "embed", centres[i % 3] + 0.01 * (i // 3)))
    kept = dedup(patches, tau=0.5)
    assert kept == patches[:3]
    assert dedup(patches, tau=0.5, use_index=False) == kept


def test_dedup_collect_groups_members():
    patches = _vectors(20, d=2, seed=9, spread=0.05)
    out = [t[0] for t in Dedup(PatchSource(patches), 1.0, collect="label")]
    assert len(out) == 1
    assert out[0].get("group_label") == ("g0", "g1", "g2")
    assert out[0].lineage.chain[0].source_id == patches[0].patch_id


def test_count_by_groups_in_key_order():
    patches = _boxes(30)
    op = CountBy(PatchSource(patches), "frameno_hint")
    out = [t[0] for t in op]
    assert [p.get("frameno_hint") for p in out] == list(range(6))
    assert [p.get("count") for p in out] == [5] * 6
    assert op.counts == {k: 5 for k in range(6)}


def test_count_by_rejects_mixed_key_types():
    blank = Frame("mixed", 0, np.zeros((4, 4, 3), dtype=np.uint8))
    patches = [
        make_patch(blank, BoundingBox(0, 0, 2, 2), {"k": "x"}),
        make_patch(blank, BoundingBox(1, 1, 3, 3), {"k": 3}),
    ]
    with pytest.raises(TagMismatchError):
        list(CountBy(PatchSource(patches), "k"))


def test_count_by_groups_integer_and_float_keys_together():
    blank = Frame("mixed", 0, np.zeros((4, 4, 3), dtype=np.uint8))
    patches = [
        make_patch(blank, BoundingBox(0, 0, 2, 2), {"k": 2}),
        make_patch(blank, BoundingBox(1, 1, 3, 3), {"k": 1.5}),
    ]
    op = CountBy(PatchSource(patches), "k")
    assert len(list(op)) == 2
    assert list(op.counts) == [1.5, 2]


def test_backtrace_modes_agree(road):
    store, blobs, _ = road
    cars = [p for p in blobs.scan() if p.label == "car"][:4]
    by_index = [(p.patch_id, f.frame_no) for p, f in backtrace(cars, store, "lineage_index")]
    by_scan = [(p.patch_id, f.frame_no) for p, f in backtrace(cars, store, "rescan")]
    assert by_index == by_scan == [(p.patch_id, p.frameno) for p in cars]


@pytest.mark.parametrize("layout", list(Layout))
def test_backtrace_lineage_index_never_reads_more_than_rescan(tmp_path, layout):
    rng = np.random.default_rng(12)
    frames = [Frame("clips", n, rng.integers(0, 255, size=(8, 8, 3), dtype=np.uint8)) for n in range(64)]
    desc = StoreDescriptor(
        layout=layout, path=str(tmp_path / "clips.db"), codec=CodecConfig.lossless(), clip_len=16, video_id="clips"
    )
    store = ingest(iter(frames), desc)
    # several wanted frames share a clip
    wanted = [2, 5, 6, 7, 20, 21, 40, 5]
    patches = [make_patch(frames[n], BoundingBox(0, 0, 4, 4)) for n in wanted]

    by_index, by_scan = IoCounters(), IoCounters()
    indexed = list(backtrace(patches, store, "lineage_index", by_index))
    rescanned = list(backtrace(patches, store, "rescan", by_scan))

    assert [(p.patch_id, f.frame_no) for p, f in indexed] == [(p.patch_id, f.frame_no) for p, f in rescanned]
    for _, frame in indexed:
        assert np.array_equal(frame.pixels, frames[frame.frame_no].pixels)
    assert by_index.records_read <= by_scan.records_read
    assert by_index.frames_decoded <= by_scan.frames_decoded
    expected_reads = {Layout.FRAME_FILE: 7, Layout.SEGMENTED_FILE: 3, Layout.ENCODED_FILE: 1}
    assert by_index.records_read == expected_reads[layout]


def test_backtrace_operator_appends_frames(road):
    store, blobs, _ = road
    io = IoCounters()
    op = Backtrace(Select(PatchSource(blobs.scan()), eq("label", "person")), store, io=io)
    out = list(op)
    assert len(out) == FRAMES // 2
    for blob, frame_patch in out:
        assert frame_of(frame_patch) == ("road", blob.frameno)
        assert frame_patch.bbox == BoundingBox(0, 0, 96, 48)
    assert io.records_read == FRAMES // 2


def test_backtrace_rejects_foreign_video(road):
    store, _, _ = road
    with pytest.raises(MissingBaseFrameError):
        list(backtrace(_vectors(1), store))


def test_plan_select_over_scan(road):
    _, blobs, _ = road
    plan = SelectNode(child=ScanNode(collection=blobs.path), predicate=eq("label", "car"))
    rows, stats = run(plan)
    assert len(rows) == FRAMES
    assert stats.result_count == FRAMES
    assert stats.patch_io.records_read == len(blobs)
    rendered = stats.render()
    assert f"result.tuples={FRAMES}" in rendered
    assert "op.0.select.tuples_out" in rendered


def test_plan_index_scan_uses_persisted_index(road):
    _, blobs, _ = road
    save_index(blobs, "label_hash", build_hash(blobs.scan(), "label"))
    plan = CountByNode(
        key="frameno",
        child=IndexScanNode(collection=blobs.path, index="label_hash", value="person"),
    )
    rows, stats = run(plan)
    assert [t[0].frameno for t in rows] == list(range(0, FRAMES, 2))
    assert stats.index_probes == 1
    assert stats.patch_io.records_read == FRAMES // 2


def test_plan_index_join_with_persisted_index(road):
    _, blobs, _ = road
    save_index(blobs, "label_hash", build_hash(blobs.scan(), "label"))
    plan = IndexJoinNode(
        left=SelectNode(child=ScanNode(collection=blobs.path), predicate=eq("frameno", 0)),
        right=ScanNode(collection=blobs.path),
        kind="hash",
        left_key="label",
        index_name="label_hash",
        residual=eq("label", "person", pos=1),
    )
    rows, _ = run(plan)
    assert len(rows) == FRAMES // 2
    assert all(a.label == "person" and b.label == "person" for a, b in rows)


def test_plan_dedup_and_sim_join(road):
    _, _, hists = road
    deduped, _ = run(DedupNode(child=ScanNode(collection=hists.path), tau=0.05, collect="label"))
    assert sorted(t[0].label for t in deduped) == ["car", "person"]
    plan = SimJoinNode(
        left=ScanNode(collection=hists.path),
        right=ScanNode(collection=hists.path),
        residual=cmp((0, "frameno"), "<", (1, "frameno")),
    )
    rows, _ = run(plan, ExecOptions(sim_tau=0.01))
    cars = FRAMES
    persons = FRAMES // 2
    assert len(rows) == cars * (cars - 1) // 2 + persons * (persons - 1) // 2


def test_plan_backtrace(road):
    store, blobs, _ = road
    plan = BacktraceNode(
        child=SelectNode(child=ScanNode(collection=blobs.path), predicate=eq("frameno", 3)),
        store=store.descriptor.path,
        mode="rescan",
    )
    execution = execute(plan)
    rows = execution.drain()
    assert len(rows) == 1
    assert execution.stats.io.records_read == FRAMES


def test_validation_reports_every_problem(road):
    store, blobs, hists = road
    plan = SimJoinNode(
        left=SelectNode(child=ScanNode(collection=blobs.path), predicate=eq("label", "truck")),
        right=ScanNode(collection=str(Path(blobs.path).parent / "missing.patches")),
    )
    violations = validate_plan(plan)
    assert any("root.left (select)" in v and "truck" in v for v in violations)
    assert any("root.right (scan)" in v and "cannot open collection" in v for v in violations)
    assert any("left side needs feature data" in v for v in violations)
    with pytest.raises(PlanValidationError) as info:
        execute(plan)
    assert info.value.violations == violations


def test_validation_checks_index_names_and_dims(road):
    _, blobs, hists = road
    assert any(
        "no index named 'nope'" in v
        for v in validate_plan(IndexScanNode(collection=blobs.path, index="nope", value="car"))
    )
    mismatch = DedupNode(child=ScanNode(collection=blobs.path))
    assert any("needs feature data" in v for v in validate_plan(mismatch))
    assert validate_plan(DedupNode(child=ScanNode(collection=hists.path))) == []
