"""
Physical operators.

Every operator pulls tuples of patches from its children (see
``core.operator``). Joins and Dedup with ``collect`` drain what they need
before producing; everything else streams.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from ..core.hashing import params_digest
from ..core.metadata import BoundingBox, MetaTag
from ..core.operator import Operator, PatchTuple
from ..core.patch import Frame, Patch, base_frames_of, derive_patch, make_patch
from ..errors import (
    DimensionMismatchError,
    MissingBaseFrameError,
    MissingFrameError,
    MixedDimensionError,
    TagMismatchError,
)
from ..etl.collection import PatchCollection
from ..index.balltree import DEFAULT_LEAF_SIZE, BallTreeIndex, GrowingBallTree, build_balltree_arrays
from ..index.counters import QueryCounters
from ..index.keyed import HASH_TAGS, ORDERED_TAGS, HashIndex, OrderedIndex, build_hash, build_ordered
from ..index.rtree import DEFAULT_CAPACITY, DEFAULT_MIN_FILL, RTreeIndex, RTreeMode, build_rtree
from ..storage.video_store import IoCounters, VideoStore
from .predicates import Predicate, TupleBlock, evaluate_block, patch_value

logger = structlog.get_logger(__name__)

DEFAULT_PROBE_BATCH = 1024
SELECT_BATCH = 256

AnyIndex = Union[HashIndex, OrderedIndex, RTreeIndex, BallTreeIndex]


class PatchSource(Operator):
    """In-memory patches as 1-tuples."""

    name = "source"

    def __init__(self, patches: Iterable[Patch]):
        super().__init__()
        self.patches = patches

    def produce(self) -> Iterator[PatchTuple]:
        for patch in self.patches:
            yield (patch,)


class Scan(Operator):
    name = "scan"

    def __init__(self, collection: PatchCollection, patch_io: Optional[IoCounters] = None):
        super().__init__()
        self.collection = collection
        self.patch_io = patch_io if patch_io is not None else IoCounters()

    def produce(self) -> Iterator[PatchTuple]:
        for patch in self.collection.scan(self.patch_io):
            yield (patch,)


class IndexScan(Operator):
    """
    The patches of ``collection`` one index probe returns, by ascending id.

    Keyed indexes take ``value`` (equality) or ``lo``/``hi`` (ordered,
    half-open); an R-tree takes ``box`` and ``mode``; a Ball-tree takes
    ``vector`` and ``tau``.
    """

    name = "index_scan"

    def __init__(
        self,
        collection: PatchCollection,
        index: AnyIndex,
        value: Optional[Union[int, float, str]] = None,
        lo: Optional[float] = None,
        hi: Optional[float] = None,
        box: Optional[BoundingBox] = None,
        mode: RTreeMode = RTreeMode.INTERSECTS,
        vector: Optional[Sequence[float]] = None,
        tau: Optional[float] = None,
        patch_io: Optional[IoCounters] = None,
    ):
        super().__init__()
        self.collection = collection
        self.index = index
        self.value = value
        self.lo = lo
        self.hi = hi
        self.box = box
        self.mode = RTreeMode(mode)
        self.vector = vector
        self.tau = tau
        self.patch_io = patch_io if patch_io is not None else IoCounters()
        self.counters = QueryCounters()

    def _ids(self) -> List[int]:
        if isinstance(self.index, RTreeIndex):
            return list(self.index.query(self.box, self.mode, self.counters))
        if isinstance(self.index, BallTreeIndex):
            return list(self.index.within(np.asarray(self.vector, dtype=np.float64), self.tau, self.counters))
        if self.lo is not None and isinstance(self.index, OrderedIndex):
            return self.index.range(self.lo, self.hi, self.counters)
        return self.index.lookup(self.value, self.counters)

    def produce(self) -> Iterator[PatchTuple]:
        ids = sorted(set(self._ids()))
        self.stats.index_probes = self.counters.probes
        for patch in self.collection.get_many(ids, self.patch_io):
            yield (patch,)


class Select(Operator):
    """Keeps the tuples satisfying ``predicate``; evaluates a batch at a time."""

    name = "select"

    def __init__(self, child: Operator, predicate: Predicate, batch: int = SELECT_BATCH):
        super().__init__(child)
        self.predicate = predicate
        self.batch = batch

    def _emit(self, pending: List[PatchTuple]) -> Iterator[PatchTuple]:
        mask = evaluate_block(self.predicate, TupleBlock(pending))
        for tup, keep in zip(pending, mask.tolist()):
            if keep:
                yield tup

    def produce(self) -> Iterator[PatchTuple]:
        pending: List[PatchTuple] = []
        for tup in self.children[0]:
            pending.append(tup)
            if len(pending) >= self.batch:
                yield from self._emit(pending)
                pending = []
        if pending:
            yield from self._emit(pending)


class NestedLoopJoin(Operator):
    """
    Theta join testing every (left, right) pair.

    The right side is materialized once; each left tuple is evaluated
    against all of it in one vectorized pass. Output is left order, then
    right order.
    """

    name = "nested_loop_join"

    def __init__(self, left: Operator, right: Operator, predicate: Predicate):
        super().__init__(left, right)
        self.predicate = predicate

    def produce(self) -> Iterator[PatchTuple]:
        inner = list(self.children[1])
        if not inner:
            return
        block = TupleBlock(inner)
        for outer in self.children[0]:
            mask = evaluate_block(self.predicate, block, TupleBlock([outer]))
            for row in np.flatnonzero(mask).tolist():
                yield outer + inner[row]


class IndexKindName(str, Enum):
    HASH = "hash"
    ORDERED = "ordered"
    RTREE = "rtree"
    BALLTREE = "balltree"


class IndexJoin(Operator):
    """
    Join probing an index over the right side with each left tuple.

    ``index`` may be a prebuilt index over the right collection, in which
    case ``resolve`` turns matched ids into patches; otherwise the right
    side (1-tuples) is drained and indexed on the fly.
    """

    name = "index_join"

    def __init__(
        self,
        left: Operator,
        right: Operator,
        kind: IndexKindName,
        left_key: Optional[str] = None,
        right_key: Optional[str] = None,
        left_pos: int = 0,
        lo_offset: Optional[float] = None,
        hi_offset: Optional[float] = None,
        mode: RTreeMode = RTreeMode.INTERSECTS,
        tau: Optional[float] = None,
        residual: Optional[Predicate] = None,
        index: Optional[AnyIndex] = None,
        resolve: Optional[Callable[[Sequence[int]], List[Patch]]] = None,
        leaf_size: int = DEFAULT_LEAF_SIZE,
        capacity: int = DEFAULT_CAPACITY,
        min_fill: float = DEFAULT_MIN_FILL,
    ):
        super().__init__(left, right)
        self.kind = IndexKindName(kind)
        self.left_key = left_key or right_key
        self.right_key = right_key or left_key
        self.left_pos = left_pos
        self.lo_offset = lo_offset
        self.hi_offset = hi_offset
        self.mode = RTreeMode(mode)
        self.tau = tau
        self.residual = residual
        self.index = index
        self.resolve = resolve
        self.leaf_size = leaf_size
        self.capacity = capacity
        self.min_fill = min_fill
        self.counters = QueryCounters()

    def _build(self, patches: List[Patch]) -> AnyIndex:
        if self.kind is IndexKindName.HASH:
            return build_hash(patches, self.right_key)
        if self.kind is IndexKindName.ORDERED:
            return build_ordered(patches, self.right_key)
        if self.kind is IndexKindName.RTREE:
            return build_rtree(((p.bbox, i) for i, p in enumerate(patches)), self.capacity, self.min_fill)
        matrix = np.vstack([p.features() for p in patches])
        return build_balltree_arrays(np.arange(len(patches), dtype=np.uint64), matrix, self.leaf_size)

    def _probe(self, index: AnyIndex, patch: Patch) -> List[int]:
        if self.kind is IndexKindName.RTREE:
            return sorted(index.query(patch.bbox, self.mode, self.counters))
        if self.kind is IndexKindName.BALLTREE:
            return sorted(index.within(patch.features(), self.tau, self.counters))
        tags = ORDERED_TAGS if self.kind is IndexKindName.ORDERED else HASH_TAGS
        value, tag = patch_value(patch, self.left_key)
        if tag is None or tag not in tags:
            self.counters.probes += 1
            return []
        if self.lo_offset is not None and isinstance(index, OrderedIndex):
            return index.range(value + self.lo_offset, value + self.hi_offset, self.counters)
        return index.lookup(value, self.counters)

    def produce(self) -> Iterator[PatchTuple]:
        if self.index is not None:
            index, lookup = self.index, None
        else:
            right = [tup[0] for tup in self.children[1]]
            if not right:
                return
            index = self._build(right)
            # on-the-fly ids: keyed indexes store patch ids, the spatial ones store positions
            if self.kind in (IndexKindName.HASH, IndexKindName.ORDERED):
                position = {p.patch_id: i for i, p in enumerate(right)}
                lookup = lambda ids: sorted((position[pid] for pid in ids))  # noqa: E731
            else:
                lookup = lambda ids: ids  # noqa: E731
        for outer in self.children[0]:
            ids = self._probe(index, outer[self.left_pos])
            self.stats.index_probes = self.counters.probes
            if not ids:
                continue
            if lookup is None:
                matches = self.resolve(sorted(ids))
            else:
                matches = [right[i] for i in lookup(ids)]
            joined = [outer + (patch,) for patch in matches]
            if self.residual is not None:
                mask = evaluate_block(self.residual, TupleBlock(joined)).tolist()
                joined = [tup for tup, keep in zip(joined, mask) if keep]
            yield from joined


class SimJoin(Operator):
    """
    Similarity join on Euclidean distance of patch data.

    Both sides are drained; the build side is loaded into a Ball-tree and
    the other side probes it in batches. Pairs come out in probe order,
    then ascending matched patch id.
    """

    name = "sim_join"

    def __init__(
        self,
        left: Operator,
        right: Operator,
        tau: float,
        build_side: str = "auto",
        left_pos: int = 0,
        right_pos: int = 0,
        residual: Optional[Predicate] = None,
        probe_batch: int = DEFAULT_PROBE_BATCH,
        leaf_size: int = DEFAULT_LEAF_SIZE,
    ):
        super().__init__(left, right)
        if build_side not in ("auto", "left", "right"):
            raise ValueError(f"build_side must be auto, left or right, got {build_side!r}")
        self.tau = tau
        self.build_side = build_side
        self.left_pos = left_pos
        self.right_pos = right_pos
        self.residual = residual
        self.probe_batch = probe_batch
        self.leaf_size = leaf_size
        self.built_on: Optional[str] = None
        self.counters = QueryCounters()

    @staticmethod
    def _matrix(tuples: List[PatchTuple], pos: int, side: str) -> np.ndarray:
        rows = [tup[pos].features() for tup in tuples]
        shapes = {row.shape for row in rows}
        if len(shapes) > 1:
            raise MixedDimensionError(f"{side} side of a similarity join mixes data shapes {sorted(shapes)}")
        return np.vstack(rows)

    def produce(self) -> Iterator[PatchTuple]:
        left = list(self.children[0])
        right = list(self.children[1])
        if not left or not right:
            return
        left_m = self._matrix(left, self.left_pos, "left")
        right_m = self._matrix(right, self.right_pos, "right")
        if left_m.shape[1] != right_m.shape[1]:
            raise DimensionMismatchError(
                f"Similarity join over {left_m.shape[1]}-d and {right_m.shape[1]}-d vectors"
            )

        side = self.build_side
        if side == "auto":
            side = "left" if len(left) <= len(right) else "right"
        self.built_on = side
        build, build_m, build_pos, probe, probe_m = (
            (left, left_m, self.left_pos, right, right_m)
            if side == "left"
            else (right, right_m, self.right_pos, left, left_m)
        )
        tree = build_balltree_arrays(np.arange(len(build), dtype=np.uint64), build_m, self.leaf_size)
        logger.debug("Similarity join index built", side=side, size=len(build), probes=len(probe))

        build_ids = [tup[build_pos].patch_id for tup in build]
        for start in range(0, len(probe), self.probe_batch):
            hits = tree.within_many(probe_m[start:start + self.probe_batch], self.tau, self.counters)
            self.stats.index_probes = self.counters.probes
            for offset, rows in enumerate(hits):
                if not rows:
                    continue
                probe_tup = probe[start + offset]
                rows = sorted(rows, key=lambda row: (build_ids[row], row))
                if side == "left":
                    joined = [build[row] + probe_tup for row in rows]
                else:
                    joined = [probe_tup + build[row] for row in rows]
                if self.residual is not None:
                    mask = evaluate_block(self.residual, TupleBlock(joined)).tolist()
                    joined = [tup for tup, keep in zip(joined, mask) if keep]
                yield from joined


class Dedup(Operator):
    """
    Greedy sequential deduplication.

    An input is kept when no previously kept patch lies within ``tau``.
    With ``collect`` set, the whole input is drained and each kept patch
    is emitted as a derived patch carrying ``group_<collect>``: the sorted
    distinct values of that key over the members merged into it. Members
    join the earliest kept patch within ``tau``.
    """

    name = "dedup"

    def __init__(
        self,
        child: Operator,
        tau: float,
        collect: Optional[str] = None,
        use_index: bool = True,
        pos: int = 0,
        leaf_size: int = DEFAULT_LEAF_SIZE,
    ):
        super().__init__(child)
        self.tau = tau
        self.collect = collect
        self.use_index = use_index
        self.pos = pos
        self.leaf_size = leaf_size
        self.counters = QueryCounters()

    def _groups(self) -> Iterator[Tuple[int, PatchTuple]]:
        """(index of the kept tuple the input joins, input tuple); new kept tuples get the next index."""
        kept_set: Optional[GrowingBallTree] = None
        flat: List[np.ndarray] = []
        kept = 0
        for tup in self.children[0]:
            vector = tup[self.pos].features()
            if self.use_index:
                if kept_set is None:
                    kept_set = GrowingBallTree(vector.shape[0], self.leaf_size)
                match = kept_set.nearest_within(vector, self.tau, self.counters)
                self.stats.index_probes = self.counters.probes
            else:
                match = None
                if flat:
                    if flat[0].shape != vector.shape:
                        raise DimensionMismatchError(f"Dedup over {flat[0].shape} and {vector.shape} data")
                    diff = np.vstack(flat) - vector
                    close = np.flatnonzero(np.einsum("ij,ij->i", diff, diff) <= self.tau * self.tau)
                    match = int(close[0]) if close.shape[0] else None
            if match is None:
                match = kept
                kept += 1
                if self.use_index:
                    kept_set.add(match, vector)
                else:
                    flat.append(vector)
            yield match, tup

    def produce(self) -> Iterator[PatchTuple]:
        if self.collect is None:
            emitted = 0
            for group, tup in self._groups():
                if group == emitted:
                    emitted += 1
                    yield tup
            return

        representatives: List[PatchTuple] = []
        members: List[set] = []
        for group, tup in self._groups():
            if group == len(representatives):
                representatives.append(tup)
                members.append(set())
            value, tag = patch_value(tup[self.pos], self.collect)
            if tag is not None:
                members[group].add(str(value))
        digest = params_digest("dedup", {"tau": float(self.tau), "collect": self.collect})
        key = f"group_{self.collect}"
        for tup, values in zip(representatives, members):
            rep = derive_patch(tup[self.pos], "dedup", None, {key: sorted(values)}, digest)
            yield tup[:self.pos] + (rep,) + tup[self.pos + 1:]


class CountBy(Operator):
    """
    Groups by one key and emits one patch per group, in ascending key order.

    The group patch derives from the group's first member, carries the key
    and ``count``, and has empty data. Totals are also kept in ``counts``.
    """

    name = "count_by"

    def __init__(self, child: Operator, key: str, pos: int = 0):
        super().__init__(child)
        self.key = key
        self.pos = pos
        self.counts: Dict[object, int] = {}

    def produce(self) -> Iterator[PatchTuple]:
        first: Dict[object, Patch] = {}
        counts: Dict[object, int] = {}
        kind: Optional[str] = None
        for tup in self.children[0]:
            patch = tup[self.pos]
            value, tag = patch_value(patch, self.key)
            if tag is None:
                continue
            # integer and float keys group together
            this_kind = "numeric" if tag in (MetaTag.INTEGER, MetaTag.FLOAT) else tag.value
            if kind is None:
                kind = this_kind
            elif this_kind != kind:
                raise TagMismatchError(f"Cannot group '{self.key}': values are both {kind} and {this_kind}")
            if value not in counts:
                first[value] = patch
                counts[value] = 0
            counts[value] += 1
        self.counts = dict(sorted(counts.items()))
        digest = params_digest("count_by", {"key": self.key})
        for value, count in self.counts.items():
            empty = np.zeros(0, dtype=np.float32)
            yield (derive_patch(first[value], "count_by", empty, {"count": count}, digest),)


class BacktraceMode(str, Enum):
    LINEAGE_INDEX = "lineage_index"
    RESCAN = "rescan"


def backtrace(
    patches: Iterable[Patch],
    store: VideoStore,
    mode: BacktraceMode = BacktraceMode.LINEAGE_INDEX,
    io: Optional[IoCounters] = None,
    probes: Optional[QueryCounters] = None,
) -> Iterator[Tuple[Patch, Frame]]:
    """
    (patch, base frame) for every base frame of every patch, in input order.

    lineage_index fetches each distinct base frame once by key (each touched
    clip once on clip layouts); rescan reads the whole store and keeps the
    frames it needs.
    """
    io = io if io is not None else IoCounters()
    probes = probes if probes is not None else QueryCounters()
    pending: List[Tuple[Patch, int]] = []
    for patch in patches:
        for video_id, frame_no in base_frames_of(patch):
            if video_id != store.video_id:
                raise MissingBaseFrameError(
                    f"Patch {patch.patch_id:#018x} descends from video '{video_id}', store holds '{store.video_id}'"
                )
            pending.append((patch, frame_no))
    if not pending:
        return

    wanted = sorted({frame_no for _, frame_no in pending})
    frames: Dict[int, Frame] = {}
    if BacktraceMode(mode) is BacktraceMode.LINEAGE_INDEX:
        probes.probes += len(wanted)
        try:
            frames = store.random_access_many(wanted, io)
        except MissingFrameError as e:
            raise MissingBaseFrameError(str(e)) from e
    else:
        needed = set(wanted)
        for frame in store.scan(None, io):
            if frame.frame_no in needed:
                frames[frame.frame_no] = frame
        missing = needed - set(frames)
        if missing:
            raise MissingBaseFrameError(f"Frames {sorted(missing)[:5]} not in store {store.info.descriptor.path}")

    for patch, frame_no in pending:
        yield patch, frames[frame_no]


class Backtrace(Operator):
    """Appends the base frame (as a whole-frame patch) of the patch at ``pos``."""

    name = "backtrace"

    def __init__(
        self,
        child: Operator,
        store: VideoStore,
        mode: BacktraceMode = BacktraceMode.LINEAGE_INDEX,
        pos: int = 0,
        io: Optional[IoCounters] = None,
    ):
        super().__init__(child)
        self.store = store
        self.mode = BacktraceMode(mode)
        self.pos = pos
        self.io = io if io is not None else IoCounters()
        self.counters = QueryCounters()

    def arity(self) -> int:
        return self.children[0].arity() + 1

    def produce(self) -> Iterator[PatchTuple]:
        tuples = list(self.children[0])
        distinct = list({id(tup[self.pos]): tup[self.pos] for tup in tuples}.values())
        whole: Dict[int, Patch] = {}
        frames_of: Dict[int, List[Patch]] = {}
        for patch, frame in backtrace(distinct, self.store, self.mode, self.io, self.counters):
            if frame.frame_no not in whole:
                region = BoundingBox(0, 0, frame.width, frame.height)
                whole[frame.frame_no] = make_patch(frame, region, op_name="frame")
            frames_of.setdefault(id(patch), []).append(whole[frame.frame_no])
        self.stats.index_probes = self.counters.probes
        for tup in tuples:
            for frame_patch in frames_of.get(id(tup[self.pos]), ()):
                yield tup + (frame_patch,)


def frame_of(patch: Patch) -> Tuple[str, int]:
    """(video_id, frame_no) a whole-frame patch emitted by Backtrace stands for."""
    return base_frames_of(patch)[0]


def sim_join(
    left: Iterable[Patch], right: Iterable[Patch], tau: float, build_side: str = "auto"
) -> List[Tuple[Patch, Patch]]:
    """Pairs of patches whose data lie within ``tau`` of each other."""
    return [(a, b) for a, b in SimJoin(PatchSource(left), PatchSource(right), tau, build_side)]


def dedup(patches: Iterable[Patch], tau: float, use_index: bool = True) -> List[Patch]:
    """Greedy representatives of ``patches`` at distance ``tau``."""
    return [tup[0] for tup in Dedup(PatchSource(patches), tau, use_index=use_index)]
