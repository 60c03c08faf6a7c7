"""
The six benchmark workloads over synthetic scenes.

A ``Workload`` owns one physical design (layout, codec quality, seed):
it renders and ingests the scenes it needs, materializes the patch
collections and indexes a query asks for (timed as ETL), and runs the
query plans (timed as query). Every workload has named plan variants so
runs can compare physical choices on identical inputs.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Optional, Sequence, Set, Tuple

import structlog
from pydantic import BaseModel, ConfigDict, Field

from shared.config.settings import BaseConfig

from ..core.operator import PatchTuple
from ..etl.collection import PatchCollection
from ..etl.pipeline import build_collection
from ..etl.specs import GeneratorKind, GeneratorSpec, PaletteEntry, TransformerKind, TransformerSpec
from ..index.keyed import build_hash
from ..index.persist import save_index
from ..query.executor import ExecOptions, ExecStats, execute
from ..query.operators import BacktraceMode, IndexKindName
from ..query.plan import (
    BacktraceNode,
    CountByNode,
    DedupNode,
    IndexJoinNode,
    IndexScanNode,
    NestedLoopJoinNode,
    ScanNode,
    SelectNode,
    SimJoinNode,
)
from ..query.predicates import BoxContains, BoxOverlap, Contains, EuclideanWithin, Ref, all_of, cmp, eq
from ..storage.codec import CodecConfig
from ..storage.video_store import Layout, StoreDescriptor, VideoStore, ingest
from .scene import GroundTruth, SceneSpec, default_palette, gen_scene, lossy_palette, pedestrian_scene
from .scoring import observe, precision_recall

logger = structlog.get_logger(__name__)

Quality = Literal["lossless", "high", "medium", "low"]

QUERY_VARIANTS: Dict[str, Tuple[str, ...]] = {
    "q1": ("nested_loop", "simjoin"),
    "q2": ("scan", "hash_index"),
    "q3": ("rescan", "lineage_index"),
    "q4": ("select_dedup", "dedup_filter", "select_dedup_noindex"),
    "q5": ("scan", "hash_index"),
    "q6": ("nested_loop", "index_join"),
}


class SceneSettings(BaseModel):
    """Sizes of the scenes a benchmark renders."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    frames: int = Field(default=200, ge=1)
    width: int = Field(default=320, ge=32)
    height: int = Field(default=240, ge=32)
    entities: int = Field(default=6, ge=0)
    album_images: int = Field(default=60, ge=2)
    album_duplicates: int = Field(default=10, ge=0)
    pedestrians: int = Field(default=12, ge=0)
    palette: Literal["default", "lossy"] = "default"
    noise_amplitude: Optional[int] = Field(default=None, ge=0, le=8)


@dataclass
class QueryOutcome:
    result_count: int
    expected_count: int
    precision: float
    recall: float
    etl_ms: float
    query_ms: float
    records_read: int
    frames_decoded: int
    index_probes: int
    storage_bytes: int
    patch_records_read: int = 0


def codec_for(quality: str, config: BaseConfig) -> CodecConfig:
    if quality == "lossless":
        return CodecConfig.lossless()
    return CodecConfig.lossy(config.quant_step(quality))


class Workload:
    """One physical design of the benchmark scenes and everything derived from them."""

    def __init__(
        self,
        workdir: str,
        config: BaseConfig,
        layout: Layout = Layout.FRAME_FILE,
        quality: str = "lossless",
        seed: int = 0,
        scene: Optional[SceneSettings] = None,
        label_noise_p: float = 0.0,
        target: Optional[int] = None,
    ):
        self.workdir = workdir
        self.config = config
        self.layout = Layout(layout)
        self.quality = quality
        self.codec = codec_for(quality, config)
        self.seed = seed
        self.scene = scene or SceneSettings()
        self.label_noise_p = label_noise_p
        self.target = target
        self.options = ExecOptions.from_config(config)
        self._videos: Dict[str, Tuple[VideoStore, GroundTruth]] = {}
        self._collections: Dict[str, Tuple[PatchCollection, float]] = {}
        self._indexes: Dict[Tuple[str, str], float] = {}
        os.makedirs(workdir, exist_ok=True)

    # scenes

    @property
    def palette(self) -> List[PaletteEntry]:
        return lossy_palette() if self.scene.palette == "lossy" else default_palette()

    def scene_spec(self, name: str) -> SceneSpec:
        s = self.scene
        noise = self.config.noise_amplitude if s.noise_amplitude is None else s.noise_amplitude
        common = dict(width=s.width, height=s.height, noise_amplitude=noise, video_id=name)
        if name == "album":
            return SceneSpec(
                kind="album", seed=self.seed, frames=s.album_images, duplicates=s.album_duplicates, **common
            )
        if name == "crowd":
            return pedestrian_scene(
                self.seed, frames=s.frames, pedestrians=s.pedestrians, palette=self.palette, **common
            )
        return SceneSpec(seed=self.seed, frames=s.frames, entities=s.entities, palette=self.palette, **common)

    def _path(self, name: str, suffix: str) -> str:
        return os.path.join(self.workdir, f"{name}-{self.layout.value}-{self.quality}-s{self.seed}{suffix}")

    def video(self, name: str) -> Tuple[VideoStore, GroundTruth]:
        """Render and ingest scene ``name`` (traffic, album or crowd) once."""
        if name not in self._videos:
            frames, truth = gen_scene(self.scene_spec(name))
            desc = StoreDescriptor(
                layout=self.layout,
                path=self._path(name, ".db"),
                codec=self.codec,
                clip_len=self.config.clip_len,
                video_id=name,
            )
            self._videos[name] = (ingest(frames, desc), truth)
        return self._videos[name]

    # etl

    def blob_detector(self, palette: Optional[Sequence[PaletteEntry]] = None) -> GeneratorSpec:
        return GeneratorSpec(
            kind=GeneratorKind.BLOB_DETECTOR,
            palette=list(palette or self.palette),
            min_area=self.config.min_area,
            label_noise_p=self.label_noise_p,
            seed=self.seed,
            color_tolerance=self.config.color_tolerance,
        )

    def histogram(self) -> TransformerSpec:
        return TransformerSpec(kind=TransformerKind.COLOR_HISTOGRAM, bins_per_channel=self.config.histogram_bins)

    def collection(
        self, name: str, scene: str, generator: GeneratorSpec, transformers: Sequence[TransformerSpec] = ()
    ) -> Tuple[PatchCollection, float]:
        """Materialize a pipeline over ``scene``; returns the collection and its ETL milliseconds."""
        if name not in self._collections:
            store, _ = self.video(scene)
            started = time.perf_counter()
            collection = build_collection(store.scan(), generator, transformers, self._path(name, ".patches"), name)
            self._collections[name] = (collection, (time.perf_counter() - started) * 1000)
        return self._collections[name]

    def hash_index(self, collection: PatchCollection, key: str) -> Tuple[str, float]:
        """Build and persist a hash index on ``key``; returns its name and build milliseconds."""
        name = f"{key}_hash"
        cache_key = (collection.path, name)
        if cache_key not in self._indexes:
            started = time.perf_counter()
            save_index(collection, name, build_hash(collection.scan(), key))
            self._indexes[cache_key] = (time.perf_counter() - started) * 1000
        return name, self._indexes[cache_key]

    def target_id(self, truth: GroundTruth) -> Optional[int]:
        if self.target is not None:
            return self.target
        present = sorted({obs.entity_id for observations in truth.frames for obs in observations})
        return present[0] if present else None

    # execution

    def execute(self, plan) -> Tuple[List[PatchTuple], ExecStats, float]:
        started = time.perf_counter()
        execution = execute(plan, self.options)
        rows = execution.drain()
        elapsed = (time.perf_counter() - started) * 1000
        return rows, execution.stats, elapsed

    def outcome(
        self,
        rows: List[PatchTuple],
        stats: ExecStats,
        query_ms: float,
        etl_ms: float,
        store: VideoStore,
        found: Set,
        truth: Set,
        result_count: Optional[int] = None,
    ) -> QueryOutcome:
        precision, recall = precision_recall(found, truth)
        return QueryOutcome(
            result_count=len(rows) if result_count is None else result_count,
            expected_count=len(truth),
            precision=precision,
            recall=recall,
            etl_ms=etl_ms,
            query_ms=query_ms,
            records_read=stats.io.records_read,
            frames_decoded=stats.io.frames_decoded,
            index_probes=stats.index_probes,
            storage_bytes=store.size_bytes(),
            patch_records_read=stats.patch_io.records_read,
        )


# the workloads

def _check_variant(query: str, variant: str) -> None:
    if variant not in QUERY_VARIANTS[query]:
        raise ValueError(f"{query} has no variant '{variant}' (choose from {', '.join(QUERY_VARIANTS[query])})")


def near_duplicates(work: Workload, variant: str) -> QueryOutcome:
    """Pairs of album images whose histograms lie within sim_tau."""
    _check_variant("q1", variant)
    store, truth = work.video("album")
    whole = GeneratorSpec(kind=GeneratorKind.WHOLE_IMAGE)
    collection, etl_ms = work.collection("album_hist", "album", whole, [work.histogram()])
    scan = ScanNode(collection=collection.path)
    earlier = cmp((0, "frameno"), "<", (1, "frameno"))
    if variant == "nested_loop":
        close = EuclideanWithin(left=0, right=1, tau=work.config.sim_tau)
        plan = NestedLoopJoinNode(left=scan, right=scan, predicate=all_of(close, earlier))
    else:
        plan = SimJoinNode(left=scan, right=scan, residual=earlier)
    rows, stats, query_ms = work.execute(plan)
    found = {(left.frameno, right.frameno) for left, right in rows}
    return work.outcome(rows, stats, query_ms, etl_ms, store, found, set(map(tuple, truth.duplicate_pairs)))


def vehicle_frames(work: Workload, variant: str, label: str = "vehicle") -> QueryOutcome:
    """Frames with at least one ``label`` detection."""
    _check_variant("q2", variant)
    store, truth = work.video("traffic")
    collection, etl_ms = work.collection("blobs", "traffic", work.blob_detector())
    if variant == "scan":
        source = SelectNode(child=ScanNode(collection=collection.path), predicate=eq("label", label))
    else:
        index, build_ms = work.hash_index(collection, "label")
        etl_ms += build_ms
        source = IndexScanNode(collection=collection.path, index=index, value=label)
    rows, stats, query_ms = work.execute(CountByNode(child=source, key="frameno"))
    found = {tup[0].frameno for tup in rows}
    return work.outcome(rows, stats, query_ms, etl_ms, store, found, set(truth.frames_with(label)))


def trajectory(work: Workload, variant: str) -> QueryOutcome:
    """Base frames of every detection carrying the target's barcode."""
    _check_variant("q3", variant)
    store, truth = work.video("traffic")
    glyphs, glyph_ms = work.collection("glyphs", "traffic", GeneratorSpec(kind=GeneratorKind.GLYPH_READER))
    blobs, blob_ms = work.collection("blobs", "traffic", work.blob_detector())
    target = work.target_id(truth)
    tagged = SelectNode(child=ScanNode(collection=glyphs.path), predicate=eq("text", str(target)))
    joined = IndexJoinNode(
        left=tagged,
        right=ScanNode(collection=blobs.path),
        kind=IndexKindName.ORDERED,
        left_key="frameno",
        residual=BoxContains(outer=Ref(pos=1, key="bbox"), inner=Ref(pos=0, key="bbox")),
    )
    plan = BacktraceNode(child=joined, store=store.descriptor.path, mode=BacktraceMode(variant), pos=1)
    rows, stats, query_ms = work.execute(plan)
    found = {tup[1].frameno for tup in rows}
    expected = set(truth.entity_frames(target)) if target is not None else set()
    return work.outcome(rows, stats, query_ms, glyph_ms + blob_ms, store, found, expected)


def distinct_pedestrians(work: Workload, variant: str, label: str = "pedestrian") -> QueryOutcome:
    """Distinct ``label`` entities, counted by greedy histogram dedup."""
    _check_variant("q4", variant)
    store, truth = work.video("crowd")
    collection, etl_ms = work.collection("crowd_hist", "crowd", work.blob_detector(), [work.histogram()])
    scan = ScanNode(collection=collection.path)
    if variant == "dedup_filter":
        grouped = DedupNode(child=scan, collect="label")
        plan = SelectNode(child=grouped, predicate=Contains(ref=Ref(key="group_label"), value=label))
    else:
        selected = SelectNode(child=scan, predicate=eq("label", label))
        plan = DedupNode(child=selected, use_index=variant == "select_dedup")
    rows, stats, query_ms = work.execute(plan)

    # a representative counts once for the first entity it shows
    credited: Set[int] = set()
    correct = 0
    for (patch,) in rows:
        obs = observe(truth, patch)
        if obs is not None and obs.label == label and obs.entity_id not in credited:
            credited.add(obs.entity_id)
            correct += 1
    expected = truth.entities_with(label)
    outcome = work.outcome(rows, stats, query_ms, etl_ms, store, credited, expected)
    outcome.precision = correct / len(rows) if rows else 1.0
    return outcome


def string_lookup(work: Workload, variant: str) -> QueryOutcome:
    """The first frame showing the target's barcode."""
    _check_variant("q5", variant)
    store, truth = work.video("traffic")
    glyphs, etl_ms = work.collection("glyphs", "traffic", GeneratorSpec(kind=GeneratorKind.GLYPH_READER))
    target = work.target_id(truth)
    text = str(target)
    if variant == "scan":
        plan = SelectNode(child=ScanNode(collection=glyphs.path), predicate=eq("text", text))
    else:
        index, build_ms = work.hash_index(glyphs, "text")
        etl_ms += build_ms
        plan = IndexScanNode(collection=glyphs.path, index=index, value=text)
    rows, stats, query_ms = work.execute(plan)
    frames = [tup[0].frameno for tup in rows]
    found = {min(frames)} if frames else set()
    seen = truth.entity_frames(target) if target is not None else []
    expected = {seen[0]} if seen else set()
    return work.outcome(rows, stats, query_ms, etl_ms, store, found, expected, result_count=len(found))


def behind_pairs(work: Workload, variant: str, label: str = "pedestrian") -> QueryOutcome:
    """(p1, p2) detections in one frame where p1 is behind p2 and their x-extents overlap."""
    _check_variant("q6", variant)
    store, truth = work.video("traffic")
    depth = TransformerSpec(kind=TransformerKind.DEPTH_PROXY)
    collection, etl_ms = work.collection("depths", "traffic", work.blob_detector(), [depth])
    side = SelectNode(child=ScanNode(collection=collection.path), predicate=eq("label", label))
    behind = cmp((0, "depth"), ">", (1, "depth"), offset=work.config.depth_margin)
    overlap = BoxOverlap(left=Ref(pos=0, key="bbox"), right=Ref(pos=1, key="bbox"), axis="x")
    if variant == "nested_loop":
        same_frame = cmp((0, "frameno"), "=", (1, "frameno"))
        plan = NestedLoopJoinNode(left=side, right=side, predicate=all_of(behind, same_frame, overlap))
    else:
        plan = IndexJoinNode(
            left=side, right=side, kind=IndexKindName.HASH, left_key="frameno", residual=all_of(behind, overlap)
        )
    rows, stats, query_ms = work.execute(plan)
    found = set()
    for far, near in rows:
        a, b = observe(truth, far), observe(truth, near)
        found.add((far.frameno, a.entity_id if a else None, b.entity_id if b else None, far.patch_id, near.patch_id))
    found = {key[:3] if None not in key[1:3] else key for key in found}
    expected = truth.behind_pairs(label, work.config.depth_margin)
    return work.outcome(rows, stats, query_ms, etl_ms, store, found, expected)


QUERIES: Dict[str, Callable[[Workload, str], QueryOutcome]] = {
    "q1": near_duplicates,
    "q2": vehicle_frames,
    "q3": trajectory,
    "q4": distinct_pedestrians,
    "q5": string_lookup,
    "q6": behind_pairs,
}


def run_query(work: Workload, query: str, variant: str) -> QueryOutcome:
    if query not in QUERIES:
        raise ValueError(f"Unknown query '{query}' (choose from {', '.join(QUERIES)})")
    outcome = QUERIES[query](work, variant)
    logger.info(
        "Query finished",
        query=query,
        variant=variant,
        layout=work.layout.value,
        quality=work.quality,
        seed=work.seed,
        results=outcome.result_count,
        expected=outcome.expected_count,
        query_ms=round(outcome.query_ms, 3),
    )
    return outcome
