"""
Experiments beyond the six workloads: encoding quality vs accuracy,
similarity-join scaling, index build cost and storage pushdown. Each
returns plain rows (dicts) that ``write_rows`` turns into CSV.
"""

from __future__ import annotations

import csv
import os
import time
from typing import Any, Callable, Dict, Iterable, List, Sequence

import numpy as np
import structlog

from shared.config.settings import BaseConfig

from ..core.metadata import BoundingBox
from ..core.patch import Frame, Patch, derive_patch, make_patch
from ..index.balltree import build_balltree_arrays
from ..index.keyed import build_hash, build_ordered
from ..index.rtree import build_rtree
from ..index.sources import box_entries
from ..query.operators import NestedLoopJoin, PatchSource, SimJoin
from ..query.predicates import EuclideanWithin
from ..storage.video_store import IoCounters, Layout, StoreDescriptor, ingest
from .queries import SceneSettings, Workload, codec_for, vehicle_frames
from .scene import SceneSpec, gen_scene

logger = structlog.get_logger(__name__)

Row = Dict[str, Any]

QUALITIES = ("lossless", "high", "medium", "low")
JOIN_SIZES = (1000, 2000, 4000, 8000, 16000)
JOIN_DIMS = (2, 64)
BUILD_SIZES = (1000, 10000, 100000)


def write_rows(rows: Sequence[Row], path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    columns: List[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _ms(started: float) -> float:
    return round((time.perf_counter() - started) * 1000, 3)


def encoding_tradeoff(
    engine: BaseConfig,
    workdir: str,
    seeds: Iterable[int] = (7,),
    frames: int = 100,
    layouts: Sequence[Layout] = tuple(Layout),
    qualities: Sequence[str] = QUALITIES,
) -> List[Row]:
    """Storage bytes and vehicle-frame accuracy per layout and quality, on the lossy-palette scene."""
    rows = []
    scene = SceneSettings(frames=frames, palette="lossy")
    for seed in seeds:
        for layout in layouts:
            for quality in qualities:
                work = Workload(workdir, engine, layout=layout, quality=quality, seed=seed, scene=scene)
                started = time.perf_counter()
                store, _ = work.video("traffic")
                ingest_ms = _ms(started)
                outcome = vehicle_frames(work, "scan")
                rows.append(
                    {
                        "layout": Layout(layout).value,
                        "quality": quality,
                        "codec": work.codec.describe(),
                        "seed": seed,
                        "frames": frames,
                        "storage_bytes": store.size_bytes(),
                        "ingest_ms": ingest_ms,
                        "result_count": outcome.result_count,
                        "precision": round(outcome.precision, 4),
                        "recall": round(outcome.recall, 4),
                    }
                )
    return rows


def vector_patches(matrix: np.ndarray, video_id: str = "vectors") -> List[Patch]:
    """One feature patch per row, each derived from its own 1x1 base frame."""
    pixel = np.zeros((1, 1, 3), dtype=np.uint8)
    region = BoundingBox(0, 0, 1, 1)
    out = []
    for number, row in enumerate(matrix):
        base = make_patch(Frame(video_id, number, pixel), region, op_name="vector")
        out.append(derive_patch(base, "embed", row))
    return out


def join_scaling(
    engine: BaseConfig,
    workdir: str = "",
    seed: int = 7,
    sizes: Sequence[int] = JOIN_SIZES,
    dims: Sequence[int] = JOIN_DIMS,
    tau: float = 0.01,
    with_nested_loop: bool = False,
) -> List[Row]:
    """SimJoin wall time against input size and dimensionality, uniform vectors in the unit cube."""
    rows = []
    for d in dims:
        for n in sizes:
            rng = np.random.default_rng([seed, d, n])
            left = vector_patches(rng.random((n, d)), "left")
            right = vector_patches(rng.random((n, d)), "right")
            join = SimJoin(
                PatchSource(left), PatchSource(right), tau, probe_batch=engine.probe_batch, leaf_size=engine.leaf_size
            )
            started = time.perf_counter()
            pairs = sum(1 for _ in join)
            row: Row = {"n": n, "d": d, "tau": tau, "sim_join_ms": _ms(started), "pairs": pairs}
            if with_nested_loop:
                loop = NestedLoopJoin(PatchSource(left), PatchSource(right), EuclideanWithin(left=0, right=1, tau=tau))
                started = time.perf_counter()
                row["nested_loop_pairs"] = sum(1 for _ in loop)
                row["nested_loop_ms"] = _ms(started)
            rows.append(row)
            logger.debug("Join scaling point", n=n, d=d, pairs=pairs, ms=row["sim_join_ms"])
    return rows


def _keyed_patches(n: int, rng: np.random.Generator) -> List[Patch]:
    frame = Frame("keys", 0, np.zeros((256, 256, 3), dtype=np.uint8))
    xs = rng.integers(0, 248, size=(n, 2))
    sizes = rng.integers(1, 9, size=(n, 2))
    tracks = rng.integers(0, max(1, n // 4), size=n)
    out = []
    for (x, y), (w, h), track in zip(xs.tolist(), sizes.tolist(), tracks.tolist()):
        out.append(make_patch(frame, BoundingBox(x, y, x + w, y + h), {"track": track}))
    return out


def index_build_cost(
    engine: BaseConfig,
    workdir: str = "",
    seed: int = 7,
    sizes: Sequence[int] = BUILD_SIZES,
    dim: int = 24,
) -> List[Row]:
    """Build milliseconds of each index kind; the R-tree/ordered ratio is reported per size."""
    rows = []
    for n in sizes:
        rng = np.random.default_rng([seed, n])
        patches = _keyed_patches(n, rng)
        entries = list(box_entries(patches))
        matrix = rng.random((n, dim))
        ids = np.arange(n, dtype=np.uint64)
        builders: Dict[str, Callable[[], object]] = {
            "hash": lambda: build_hash(patches, "track"),
            "ordered": lambda: build_ordered(patches, "track"),
            "rtree": lambda: build_rtree(entries, engine.rtree_capacity, engine.rtree_min_fill),
            "balltree": lambda: build_balltree_arrays(ids, matrix, engine.leaf_size),
        }
        timings = {}
        for kind, build in builders.items():
            started = time.perf_counter()
            build()
            timings[kind] = _ms(started)
            rows.append({"index": kind, "n": n, "build_ms": timings[kind]})
        ratio = timings["rtree"] / timings["ordered"] if timings["ordered"] else float("inf")
        rows.append({"index": "rtree/ordered", "n": n, "build_ms": round(ratio, 3)})
    return rows


def pushdown(
    engine: BaseConfig,
    workdir: str,
    seed: int = 7,
    frames: int = 1000,
    frame_range: tuple = (100, 200),
    width: int = 64,
    height: int = 48,
) -> List[Row]:
    """I/O counters of one temporal range scan per layout."""
    spec = SceneSpec(seed=seed, frames=frames, width=width, height=height, entities=1, video_id="pushdown")
    rows = []
    for layout in Layout:
        frame_iter, _ = gen_scene(spec)
        desc = StoreDescriptor(
            layout=layout,
            path=os.path.join(workdir, f"pushdown-{layout.value}-s{seed}.db"),
            codec=codec_for("lossless", engine),
            clip_len=engine.clip_len,
            video_id=spec.video_id,
        )
        store = ingest(frame_iter, desc)
        counters = IoCounters()
        started = time.perf_counter()
        returned = sum(1 for _ in store.scan(tuple(frame_range), counters))
        rows.append(
            {
                "layout": layout.value,
                "range": f"[{frame_range[0]},{frame_range[1]})",
                "frames_returned": returned,
                **counters.as_dict(),
                "scan_ms": _ms(started),
                "storage_bytes": store.size_bytes(),
            }
        )
    return rows


EXPERIMENTS: Dict[str, Callable[..., List[Row]]] = {
    "encoding_tradeoff": encoding_tradeoff,
    "join_scaling": join_scaling,
    "index_build_cost": index_build_cost,
    "pushdown": pushdown,
}


def run_experiment(name: str, engine: BaseConfig, workdir: str, **params: Any) -> List[Row]:
    if name not in EXPERIMENTS:
        raise ValueError(f"Unknown experiment '{name}' (choose from {', '.join(EXPERIMENTS)})")
    os.makedirs(workdir, exist_ok=True)
    started = time.perf_counter()
    rows = EXPERIMENTS[name](engine, workdir, **params)
    logger.info("Experiment finished", name=name, rows=len(rows), elapsed_ms=_ms(started))
    return rows
