"""
Tests for the hash, ordered, R-tree and Ball-tree indexes, checked
against brute-force answers.
"""

import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

# Add service root to path
sys.path.append(str(Path(__file__).parent.parent))

from shared.store.record_store import RecordStore, RecordStoreError

from app.core import BoundingBox, Frame, make_patch
from app.errors import (
    DimensionMismatchError,
    EmptyInputError,
    KTooLargeError,
    MissingKeyError,
    MixedDimensionError,
)
from app.index import (
    BallTreeIndex,
    GrowingBallTree,
    HashIndex,
    OrderedIndex,
    QueryCounters,
    RTreeIndex,
    RTreeMode,
    box_entries,
    build_balltree,
    build_hash,
    build_ordered,
    build_rtree,
    list_indexes,
    load_index,
    save_index,
)


def _patches(n=60, seed=1):
    rng = np.random.default_rng(seed)
    frame = Frame("cam", 0, np.zeros((128, 128, 3), dtype=np.uint8))
    out = []
    for i in range(n):
        x, y = (int(v) for v in rng.integers(0, 110, size=2))
        w, h = (int(v) for v in rng.integers(1, 18, size=2))
        meta = {"label": ["car", "person", "bike"][i % 3], "track": i % 7, "score": float(i) / 2}
        out.append(make_patch(frame, BoundingBox(x, y, x + w, y + h), meta))
    return out


def test_hash_index_matches_scan():
    patches = _patches()
    idx = build_hash(patches, "label")
    counters = QueryCounters()
    assert sorted(idx.lookup("car", counters)) == sorted(p.patch_id for p in patches if p.label == "car")
    assert idx.lookup("truck") == []
    assert counters.probes == 1
    assert idx.size == len(patches)


def test_ordered_index_range_and_lookup():
    patches = _patches()
    idx = build_ordered(patches, "track")
    want = {p.patch_id for p in patches if 2 <= p.get("track") < 5}
    assert set(idx.range(2, 5)) == want
    assert set(idx.lookup(3)) == {p.patch_id for p in patches if p.get("track") == 3}
    assert idx.range(5, 2) == []
    assert list(idx.keys) == sorted(idx.keys)


def test_ordered_index_on_box_coordinate():
    patches = _patches()
    idx = build_ordered(patches, "bbox.x1")
    want = {p.patch_id for p in patches if 10 <= p.bbox.x1 < 50}
    assert set(idx.range(10, 50)) == want


def test_keyed_index_needs_the_key():
    patches = _patches(4)
    with pytest.raises(MissingKeyError):
        build_ordered(patches, "label")
    with pytest.raises(MissingKeyError):
        build_hash(patches, "absent")


@pytest.mark.parametrize("capacity", [4, 16])
def test_rtree_matches_brute_force(capacity):
    patches = _patches(300, seed=5)
    idx = build_rtree(box_entries(patches), capacity=capacity)
    idx.check_invariants()
    assert idx.size == 300
    rng = np.random.default_rng(9)
    for _ in range(25):
        x, y = (int(v) for v in rng.integers(0, 100, size=2))
        q = BoundingBox(x, y, x + 30, y + 30)
        assert idx.query(q) == {p.patch_id for p in patches if p.bbox.intersects(q)}
        assert idx.query(q, RTreeMode.CONTAINS) == {p.patch_id for p in patches if q.contains(p.bbox)}


def test_rtree_counts_visits():
    idx = build_rtree(box_entries(_patches(200)), capacity=4)
    counters = QueryCounters()
    idx.query((0, 0, 5, 5), counters=counters)
    assert counters.probes == 1
    assert 1 <= counters.nodes_visited < idx.nodes


def test_rtree_rejects_empty_input():
    with pytest.raises(EmptyInputError):
        build_rtree([])
    with pytest.raises(ValueError):
        build_rtree([((0, 0, 1, 1), 1)], capacity=1)


def _vectors(n=400, d=5, seed=2):
    rng = np.random.default_rng(seed)
    return [(i + 100, rng.random(d)) for i in range(n)]


@pytest.mark.parametrize("leaf_size", [1, 8, 32])
def test_balltree_within_matches_brute_force(leaf_size):
    points = _vectors()
    idx = build_balltree(points, leaf_size)
    idx.check_invariants()
    matrix = np.vstack([v for _, v in points])
    ids = np.array([pid for pid, _ in points])
    for q in matrix[:20]:
        want = set(ids[np.linalg.norm(matrix - q, axis=1) <= 0.3].tolist())
        assert idx.within(q, 0.3) == want


def test_balltree_within_many_matches_single_queries():
    points = _vectors(300, 3)
    idx = build_balltree(points, 16)
    queries = np.vstack([v for _, v in points[:40]])
    batched = idx.within_many(queries, 0.2)
    for q, got in zip(queries, batched):
        assert got == sorted(idx.within(q, 0.2))


def test_balltree_knn_orders_by_distance_then_id():
    points = [(5, [0.0, 0.0]), (3, [1.0, 0.0]), (4, [0.0, 1.0]), (9, [3.0, 3.0])]
    idx = build_balltree(points, leaf_size=1)
    result = idx.knn(np.array([0.0, 0.0]), 3)
    assert [pid for pid, _ in result] == [5, 3, 4]
    assert result[1][1] == pytest.approx(1.0)
    with pytest.raises(KTooLargeError):
        idx.knn(np.array([0.0, 0.0]), 5)


def test_balltree_knn_matches_brute_force():
    points = _vectors(250, 4, seed=8)
    idx = build_balltree(points, 8)
    matrix = np.vstack([v for _, v in points])
    q = np.full(4, 0.5)
    dists = np.linalg.norm(matrix - q, axis=1)
    want = [points[i][0] for i in np.argsort(dists, kind="stable")[:10]]
    assert [pid for pid, _ in idx.knn(q, 10)] == want


def test_balltree_input_errors():
    with pytest.raises(EmptyInputError):
        build_balltree([])
    with pytest.raises(MixedDimensionError):
        build_balltree([(1, [0.0, 1.0]), (2, [0.0])])
    idx = build_balltree([(1, [0.0, 1.0])])
    with pytest.raises(DimensionMismatchError):
        idx.within(np.zeros(3), 1.0)


def test_balltree_identical_points_stay_in_one_leaf():
    idx = build_balltree([(i, [1.0, 1.0]) for i in range(50)], leaf_size=4)
    assert idx.node_count == 1
    assert idx.within(np.array([1.0, 1.0]), 0.0) == set(range(50))


def test_growing_balltree_returns_smallest_match():
    grow = GrowingBallTree(2, leaf_size=4, buffer_size=8)
    for pid in range(40):
        grow.add(pid, np.array([pid % 10, 0.0]))
    assert len(grow) == 40
    assert grow.nearest_within(np.array([3.0, 0.0]), 0.1) == 3
    assert grow.nearest_within(np.array([50.0, 0.0]), 1.0) is None


def test_indexes_persist_by_name(tmp_path):
    holder = SimpleNamespace(store=RecordStore(str(tmp_path / "coll.db")))
    patches = _patches(80)
    built = {
        "label_hash": build_hash(patches, "label"),
        "track_ordered": build_ordered(patches, "track"),
        "rtree": build_rtree(box_entries(patches), capacity=6),
        "balltree": build_balltree(_vectors(90), 8),
    }
    for name, idx in built.items():
        assert save_index(holder, name, idx) > 0
    assert sorted(list_indexes(holder)) == sorted(built)

    hashed = load_index(holder, "label_hash")
    assert isinstance(hashed, HashIndex)
    assert sorted(hashed.lookup("bike")) == sorted(built["label_hash"].lookup("bike"))
    ordered = load_index(holder, "track_ordered")
    assert isinstance(ordered, OrderedIndex)
    assert ordered.range(1, 4) == built["track_ordered"].range(1, 4)
    rtree = load_index(holder, "rtree")
    assert isinstance(rtree, RTreeIndex)
    assert rtree.query((20, 20, 70, 70)) == built["rtree"].query((20, 20, 70, 70))
    ball = load_index(holder, "balltree")
    assert isinstance(ball, BallTreeIndex)
    q = np.full(5, 0.4)
    assert ball.within(q, 0.35) == built["balltree"].within(q, 0.35)

    with pytest.raises(RecordStoreError):
        load_index(holder, "missing")
