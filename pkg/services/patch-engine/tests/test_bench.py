"""
Tests for the synthetic scenes, scoring, the workloads on small scenes
and the benchmark harness.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add service root to path
sys.path.append(str(Path(__file__).parent.parent))

from app.bench import (
    CSV_COLUMNS,
    BenchConfig,
    EntitySpec,
    GroundTruth,
    SceneSettings,
    SceneSpec,
    Workload,
    gen_scene,
    lossy_palette,
    pedestrian_scene,
    precision_recall,
    run_benchmark,
    run_experiment,
    run_query,
)
from app.bench.experiments import encoding_tradeoff, index_build_cost, join_scaling, pushdown
from app.bench.scene import iou
from app.errors import EntityTooLargeError
from app.etl.transformers import color_histogram
from app.storage import Layout
from shared.config.settings import BaseConfig

SMALL = SceneSettings(frames=8, width=160, height=120, entities=3, album_images=8, album_duplicates=2)


def test_scene_is_deterministic():
    spec = SceneSpec(seed=11, frames=6, width=160, height=120, entities=3)
    first, truth_a = gen_scene(spec)
    second, truth_b = gen_scene(spec)
    for a, b in zip(first, second):
        assert np.array_equal(a.pixels, b.pixels)
    assert truth_a == truth_b


def test_scene_truth_matches_pixels():
    spec = SceneSpec(seed=5, frames=5, width=200, height=120, entities=4, noise_amplitude=0)
    frames, truth = gen_scene(spec)
    colors = {entry.label: entry.rgb for entry in spec.palette}
    frames = list(frames)

    assert len(frames) == len(truth.frames) == 5
    for frame, observations in zip(frames, truth.frames):
        assert len(observations) == 4
        for obs in observations:
            x1, y1, x2, y2 = obs.bbox
            assert 0 <= x1 < x2 <= spec.width and 0 <= y1 < y2 <= spec.height
            assert tuple(frame.pixels[y1, x1]) == tuple(colors[obs.label])
            assert obs.depth == pytest.approx(1.0 - y2 / spec.height)


def test_entities_occupy_separate_lanes():
    _, truth = gen_scene(SceneSpec(seed=2, frames=3, width=160, height=160, entities=5))
    for observations in truth.frames:
        rows = sorted((o.bbox[1], o.bbox[3]) for o in observations)
        for (_, bottom), (top, _) in zip(rows, rows[1:]):
            assert bottom <= top


def test_scripted_entity_lifetime():
    spec = SceneSpec(
        seed=1,
        frames=10,
        width=160,
        height=60,
        entity_specs=[EntitySpec(label="vehicle", entity_id=4242, start=2, end=5)],
    )
    _, truth = gen_scene(spec)
    assert truth.entity_frames(4242) == [2, 3, 4]
    assert truth.distinct_counts() == {"vehicle": 1}
    assert truth.frames_with("vehicle") == [2, 3, 4]


def test_scene_spec_validation():
    with pytest.raises(ValidationError):
        SceneSpec(duplicates=2)
    with pytest.raises(ValidationError):
        SceneSpec(rect_width=(40, 30))
    with pytest.raises(ValidationError):
        SceneSpec(entity_specs=[EntitySpec(label="tram")])
    with pytest.raises(ValidationError):
        SceneSpec(kind="album", frames=3, duplicates=2)


def test_oversized_entities_are_rejected():
    with pytest.raises(EntityTooLargeError):
        gen_scene(SceneSpec(width=20, height=60, entities=1))
    with pytest.raises(EntityTooLargeError):
        gen_scene(SceneSpec(width=320, height=40, entities=5))


def test_album_plants_near_duplicates():
    spec = SceneSpec(kind="album", seed=3, frames=8, duplicates=2, width=64, height=64)
    frames, truth = gen_scene(spec)
    hists = [color_histogram(frame.pixels, 8) for frame in frames]

    assert len(truth.duplicate_pairs) == 2
    assert all(frame == [] for frame in truth.frames)
    for a, b in truth.duplicate_pairs:
        assert a < b
        assert np.linalg.norm(hists[a] - hists[b]) < 0.05


def test_pedestrian_scene_has_one_long_vehicle():
    spec = pedestrian_scene(9, frames=40, pedestrians=5, width=200, height=160)
    _, truth = gen_scene(spec)
    assert truth.distinct_counts()["vehicle"] == 1
    assert len(truth.entities_with("pedestrian")) == 5
    vehicle = next(iter(truth.entities_with("vehicle")))
    assert truth.entity_frames(vehicle) == list(range(40))


def test_truth_save_and_load(tmp_path):
    _, truth = gen_scene(SceneSpec(seed=4, frames=3, width=160, height=120, entities=2))
    path = str(tmp_path / "truth.json")
    truth.save(path)
    assert GroundTruth.load(path) == truth


def test_attribute_and_iou():
    _, truth = gen_scene(SceneSpec(seed=8, frames=2, width=160, height=120, entities=2))
    obs = truth.frames[1][0]
    x1, y1, x2, y2 = obs.bbox

    assert iou(obs.bbox, obs.bbox) == 1.0
    assert iou((0, 0, 2, 2), (2, 2, 4, 4)) == 0.0
    assert truth.attribute(1, obs.bbox) == obs
    assert truth.attribute(1, (x1 + 1, y1, x2 + 1, y2)) == obs
    assert truth.attribute(5, obs.bbox) is None


def test_precision_recall():
    assert precision_recall({1, 2, 3, 4}, {2, 4, 6}) == (0.5, 2 / 3)
    assert precision_recall(set(), set()) == (1.0, 1.0)
    assert precision_recall(set(), {1}) == (1.0, 0.0)
    assert precision_recall({1}, set()) == (0.0, 1.0)


# workloads

@pytest.fixture
def work(tmp_path):
    return Workload(str(tmp_path), BaseConfig(), seed=3, scene=SMALL)


def test_vehicle_frames_variants_agree(work):
    scan = run_query(work, "q2", "scan")
    indexed = run_query(work, "q2", "hash_index")

    assert scan.result_count == indexed.result_count
    assert (scan.precision, scan.recall) == (1.0, 1.0)
    assert (indexed.precision, indexed.recall) == (1.0, 1.0)
    assert indexed.index_probes >= 1 and scan.index_probes == 0


def test_near_duplicate_variants_agree(work):
    nested = run_query(work, "q1", "nested_loop")
    joined = run_query(work, "q1", "simjoin")

    assert nested.result_count == joined.result_count
    assert nested.expected_count == joined.expected_count == 2
    assert (joined.precision, joined.recall) == (nested.precision, nested.recall)


def test_workload_caches_scenes(work):
    store, truth = work.video("traffic")
    again, _ = work.video("traffic")
    assert again is store
    assert store.frame_count == SMALL.frames
    assert work.target_id(truth) == min(o.entity_id for frame in truth.frames for o in frame)


def test_unknown_query_or_variant(work):
    with pytest.raises(ValueError):
        run_query(work, "q9", "scan")
    with pytest.raises(ValueError):
        run_query(work, "q2", "nested_loop")


# harness

def test_bench_config_rejects_unknown_names():
    with pytest.raises(ValidationError):
        BenchConfig(queries=["q9"])
    with pytest.raises(ValidationError):
        BenchConfig(variants={"q2": ["bogus"]})
    with pytest.raises(ValidationError):
        BenchConfig(extra_knob=1)


def test_bench_config_combinations():
    config = BenchConfig(queries=["q2", "q6"], variants={"q6": ["index_join"]}, seeds=[1, 2])
    combos = config.combinations()

    assert len(combos) == 6
    assert ("q2", "scan", Layout.FRAME_FILE, "lossless", 1) in combos
    assert all(variant == "index_join" for query, variant, *_ in combos if query == "q6")


def test_run_benchmark_report(tmp_path):
    config = BenchConfig(queries=["q2"], scene=SMALL, seeds=[3], workdir=str(tmp_path))
    report = run_benchmark(config, BaseConfig())

    assert [(r.query, r.variant) for r in report.rows] == [("q2", "scan"), ("q2", "hash_index")]
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert len(csv_text.splitlines()) == 3
    assert "etl_ms" not in report.to_csv(with_timings=False).splitlines()[0]
    assert report.provenance["engine.sim_tau"] == 0.1
    assert report.render_text().startswith("# provenance")

    path = tmp_path / "out" / "report.csv"
    report.write_csv(str(path))
    assert path.read_text(encoding="utf-8") == csv_text


# experiments

def test_pushdown_experiment(tmp_path):
    rows = pushdown(BaseConfig(), str(tmp_path), frames=40, frame_range=(10, 20))
    by_layout = {row["layout"]: row for row in rows}

    assert set(by_layout) == {layout.value for layout in Layout}
    assert all(row["frames_returned"] == 10 for row in rows)
    assert by_layout["frame_file"]["records_read"] == 10


def test_join_scaling_matches_nested_loop():
    rows = join_scaling(BaseConfig(), sizes=(50,), dims=(2,), tau=0.1, with_nested_loop=True)
    assert len(rows) == 1
    assert rows[0]["pairs"] == rows[0]["nested_loop_pairs"]


def test_index_build_cost_rows():
    rows = index_build_cost(BaseConfig(), sizes=(50,), dim=4)
    assert [row["index"] for row in rows] == ["hash", "ordered", "rtree", "balltree", "rtree/ordered"]


def test_encoding_tradeoff_lossless_is_exact(tmp_path):
    rows = encoding_tradeoff(
        BaseConfig(), str(tmp_path), frames=6, layouts=(Layout.FRAME_FILE,), qualities=("lossless",)
    )
    assert len(rows) == 1
    assert rows[0]["precision"] == 1.0 and rows[0]["recall"] == 1.0
    assert lossy_palette()[0].label == "vehicle"


def test_run_experiment_unknown(tmp_path):
    with pytest.raises(ValueError):
        run_experiment("nope", BaseConfig(), str(tmp_path))
