"""
R-tree over 2-D boxes, built by Guttman insertion with quadratic split.

The build uses linked nodes; the result is frozen into preorder arrays:
each node owns ``entry_count`` consecutive rows of the entry table, whose
refs are child node numbers (internal nodes) or patch ids (leaves).
Boxes are (x1, y1, x2, y2) with x1 < x2 and y1 < y2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Set, Tuple, Union

import numpy as np

from ..core.metadata import BoundingBox
from ..errors import EmptyInputError
from .counters import QueryCounters

DEFAULT_CAPACITY = 16
DEFAULT_MIN_FILL = 0.4

Rect = Tuple[float, float, float, float]
BoxLike = Union[BoundingBox, Rect, Iterable[float]]


class RTreeMode(str, Enum):
    INTERSECTS = "intersects"
    CONTAINS = "contains"


def as_rect(box: BoxLike) -> Rect:
    if isinstance(box, BoundingBox):
        return (float(box.x1), float(box.y1), float(box.x2), float(box.y2))
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"Degenerate box {(x1, y1, x2, y2)}")
    return (x1, y1, x2, y2)


def _area(r: Rect) -> float:
    return (r[2] - r[0]) * (r[3] - r[1])


def _union(a: Rect, b: Rect) -> Rect:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _enlargement(mbr: Rect, r: Rect) -> float:
    return _area(_union(mbr, r)) - _area(mbr)


class _Node:
    __slots__ = ("leaf", "rects", "refs")

    def __init__(self, leaf: bool):
        self.leaf = leaf
        self.rects: List[Rect] = []
        self.refs: list = []

    def mbr(self) -> Rect:
        x1 = min(r[0] for r in self.rects)
        y1 = min(r[1] for r in self.rects)
        x2 = max(r[2] for r in self.rects)
        y2 = max(r[3] for r in self.rects)
        return (x1, y1, x2, y2)


class _Builder:
    def __init__(self, capacity: int, min_fill: float):
        if capacity < 2:
            raise ValueError(f"Node capacity must be at least 2, got {capacity}")
        self.capacity = capacity
        self.min_entries = max(1, min(capacity // 2, math.ceil(min_fill * capacity)))
        self.root = _Node(leaf=True)

    def insert(self, rect: Rect, pid: int) -> None:
        path: List[Tuple[_Node, int]] = []
        node = self.root
        while not node.leaf:
            slot = self._choose_subtree(node, rect)
            path.append((node, slot))
            node = node.refs[slot]
        node.rects.append(rect)
        node.refs.append(pid)

        sibling = self._split(node) if len(node.rects) > self.capacity else None
        while path:
            parent, slot = path.pop()
            parent.rects[slot] = node.mbr()
            if sibling is not None:
                parent.rects.append(sibling.mbr())
                parent.refs.append(sibling)
                sibling = self._split(parent) if len(parent.rects) > self.capacity else None
            node = parent
        if sibling is not None:
            root = _Node(leaf=False)
            root.rects = [node.mbr(), sibling.mbr()]
            root.refs = [node, sibling]
            self.root = root

    @staticmethod
    def _choose_subtree(node: _Node, rect: Rect) -> int:
        best, best_key = 0, None
        for slot, mbr in enumerate(node.rects):
            key = (_enlargement(mbr, rect), _area(mbr))
            if best_key is None or key < best_key:
                best, best_key = slot, key
        return best

    def _split(self, node: _Node) -> _Node:
        """Quadratic split; ``node`` keeps group one, the new sibling gets group two."""
        rects, refs = node.rects, node.refs
        count = len(rects)

        worst, seeds = -math.inf, (0, 1)
        for i in range(count):
            for j in range(i + 1, count):
                waste = _area(_union(rects[i], rects[j])) - _area(rects[i]) - _area(rects[j])
                if waste > worst:
                    worst, seeds = waste, (i, j)

        groups: List[List[int]] = [[seeds[0]], [seeds[1]]]
        mbrs = [rects[seeds[0]], rects[seeds[1]]]
        remaining = [i for i in range(count) if i not in seeds]
        while remaining:
            for g in (0, 1):
                if len(groups[g]) + len(remaining) == self.min_entries:
                    for i in remaining:
                        mbrs[g] = _union(mbrs[g], rects[i])
                    groups[g].extend(remaining)
                    remaining = []
                    break
            if not remaining:
                break
            pick, pick_diff = remaining[0], -1.0
            for i in remaining:
                diff = abs(_enlargement(mbrs[0], rects[i]) - _enlargement(mbrs[1], rects[i]))
                if diff > pick_diff:
                    pick, pick_diff = i, diff
            remaining.remove(pick)
            d0 = _enlargement(mbrs[0], rects[pick])
            d1 = _enlargement(mbrs[1], rects[pick])
            key0 = (d0, _area(mbrs[0]), len(groups[0]))
            key1 = (d1, _area(mbrs[1]), len(groups[1]))
            g = 0 if key0 <= key1 else 1
            groups[g].append(pick)
            mbrs[g] = _union(mbrs[g], rects[pick])

        sibling = _Node(node.leaf)
        node.rects = [rects[i] for i in groups[0]]
        node.refs = [refs[i] for i in groups[0]]
        sibling.rects = [rects[i] for i in groups[1]]
        sibling.refs = [refs[i] for i in groups[1]]
        return sibling


@dataclass(frozen=True, eq=False)
class RTreeIndex:
    capacity: int
    min_entries: int
    node_leaf: np.ndarray     # (m,) bool
    node_first: np.ndarray    # (m,) int64, first entry row
    node_count: np.ndarray    # (m,) int64, entry rows owned
    entry_rects: np.ndarray   # (E, 4) float64
    entry_refs: np.ndarray    # (E,) uint64

    @property
    def nodes(self) -> int:
        return int(self.node_leaf.shape[0])

    @property
    def size(self) -> int:
        return int(np.sum(self.node_count[self.node_leaf]))

    def query(
        self, q: BoxLike, mode: RTreeMode = RTreeMode.INTERSECTS, counters: Optional[QueryCounters] = None
    ) -> Set[int]:
        x1, y1, x2, y2 = as_rect(q)
        mode = RTreeMode(mode)
        counters = counters if counters is not None else QueryCounters()
        counters.probes += 1
        found: Set[int] = set()
        stack = [0]
        while stack:
            node = stack.pop()
            counters.nodes_visited += 1
            first = int(self.node_first[node])
            rows = slice(first, first + int(self.node_count[node]))
            rects = self.entry_rects[rows]
            overlap = (rects[:, 0] < x2) & (x1 < rects[:, 2]) & (rects[:, 1] < y2) & (y1 < rects[:, 3])
            refs = self.entry_refs[rows]
            if self.node_leaf[node]:
                counters.leaves_visited += 1
                if mode is RTreeMode.CONTAINS:
                    hit = (x1 <= rects[:, 0]) & (rects[:, 2] <= x2) & (y1 <= rects[:, 1]) & (rects[:, 3] <= y2)
                else:
                    hit = overlap
                found.update(int(ref) for ref in refs[hit])
            else:
                stack.extend(int(ref) for ref in refs[overlap][::-1])
        return found

    def check_invariants(self) -> None:
        """Every child MBR lies inside its parent entry; leaves hold every entry once."""
        for node in range(self.nodes):
            if self.node_leaf[node]:
                continue
            first = int(self.node_first[node])
            for row in range(first, first + int(self.node_count[node])):
                child = int(self.entry_refs[row])
                c_first = int(self.node_first[child])
                child_rects = self.entry_rects[c_first:c_first + int(self.node_count[child])]
                parent = self.entry_rects[row]
                assert np.all(child_rects[:, 0] >= parent[0]) and np.all(child_rects[:, 1] >= parent[1])
                assert np.all(child_rects[:, 2] <= parent[2]) and np.all(child_rects[:, 3] <= parent[3])


def build_rtree(
    entries: Iterable[Tuple[BoxLike, int]],
    capacity: int = DEFAULT_CAPACITY,
    min_fill: float = DEFAULT_MIN_FILL,
) -> RTreeIndex:
    """Build over (box, patch_id) pairs, inserted in the given order."""
    builder = _Builder(capacity, min_fill)
    count = 0
    for box, pid in entries:
        builder.insert(as_rect(box), int(pid))
        count += 1
    if count == 0:
        raise EmptyInputError("Cannot build an R-tree over zero entries")
    return _freeze(builder)


def _freeze(builder: _Builder) -> RTreeIndex:
    order: List[_Node] = []
    numbers = {}
    stack = [builder.root]
    while stack:
        node = stack.pop()
        numbers[id(node)] = len(order)
        order.append(node)
        if not node.leaf:
            stack.extend(reversed(node.refs))

    leaf = np.zeros(len(order), dtype=bool)
    first = np.zeros(len(order), dtype=np.int64)
    count = np.zeros(len(order), dtype=np.int64)
    rects: List[Rect] = []
    refs: List[int] = []
    for number, node in enumerate(order):
        leaf[number] = node.leaf
        first[number] = len(rects)
        count[number] = len(node.rects)
        rects.extend(node.rects)
        refs.extend(node.refs if node.leaf else (numbers[id(child)] for child in node.refs))
    return RTreeIndex(
        capacity=builder.capacity,
        min_entries=builder.min_entries,
        node_leaf=leaf,
        node_first=first,
        node_count=count,
        entry_rects=np.asarray(rects, dtype=np.float64).reshape(-1, 4),
        entry_refs=np.asarray(refs, dtype=np.uint64),
    )


def rtree_query(
    idx: RTreeIndex, q: BoxLike, mode: RTreeMode = RTreeMode.INTERSECTS, counters: Optional[QueryCounters] = None
) -> Set[int]:
    return idx.query(q, mode, counters)
