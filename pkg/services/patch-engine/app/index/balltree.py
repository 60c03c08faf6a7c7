"""
Ball-tree over feature vectors.

Node data lives in flat arrays in preorder. Points are permuted at build
time so every node owns a contiguous slice ``[start, end)`` of ``points``
and ``ids``; a node's children own consecutive sub-slices.

Construction: split on the dimension of maximum spread at the median
(values equal to the median go to the lower half), stop at ``leaf_size``
points or when the node has no spread left.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..errors import DimensionMismatchError, EmptyInputError, KTooLargeError, MixedDimensionError
from .counters import QueryCounters

DEFAULT_LEAF_SIZE = 32

# relative slack on pruning bounds so rounding never prunes a true match
_SLACK = 1e-9


def _distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = points - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


@dataclass(frozen=True, eq=False)
class BallTreeIndex:
    ids: np.ndarray          # (n,) uint64, permuted
    points: np.ndarray       # (n, d) float64, permuted
    leaf_size: int
    node_start: np.ndarray   # (m,) int64
    node_end: np.ndarray
    node_left: np.ndarray    # -1 for leaves
    node_right: np.ndarray
    centroids: np.ndarray    # (m, d) float64
    radii: np.ndarray        # (m,) float64

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def node_count(self) -> int:
        return int(self.radii.shape[0])

    @property
    def leaf_count(self) -> int:
        return int(np.count_nonzero(self.node_left < 0))

    def is_leaf(self, node: int) -> bool:
        return self.node_left[node] < 0

    def _bound(self, node: int) -> float:
        radius = self.radii[node]
        return radius + _SLACK * (1.0 + radius)

    def _check_query(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise DimensionMismatchError(f"Query of shape {q.shape} against a {self.dim}-d Ball-tree")
        return q

    def within(self, q: np.ndarray, r: float, counters: Optional[QueryCounters] = None) -> Set[int]:
        """Ids of points p with ||p - q|| <= r."""
        q = self._check_query(q)
        if r < 0:
            raise ValueError(f"Radius must be non-negative, got {r}")
        counters = counters if counters is not None else QueryCounters()
        counters.probes += 1
        found: Set[int] = set()
        stack = [0]
        while stack:
            node = stack.pop()
            counters.nodes_visited += 1
            counters.distance_evaluations += 1
            if np.linalg.norm(q - self.centroids[node]) > self._bound(node) + r:
                continue
            start, end = self.node_start[node], self.node_end[node]
            if self.is_leaf(node):
                counters.leaves_visited += 1
                counters.distance_evaluations += int(end - start)
                hits = _distances(self.points[start:end], q) <= r
                found.update(int(i) for i in self.ids[start:end][hits])
            else:
                stack.append(self.node_right[node])
                stack.append(self.node_left[node])
        return found

    def within_many(
        self, queries: np.ndarray, r: float, counters: Optional[QueryCounters] = None
    ) -> List[List[int]]:
        """
        Batched radius query: one traversal for a block of query vectors.

        Returns, per query row, the matching ids in ascending order.
        """
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"Queries of shape {queries.shape} against a {self.dim}-d Ball-tree"
            )
        if r < 0:
            raise ValueError(f"Radius must be non-negative, got {r}")
        counters = counters if counters is not None else QueryCounters()
        counters.probes += queries.shape[0]
        results: List[List[int]] = [[] for _ in range(queries.shape[0])]
        if queries.shape[0] == 0:
            return results
        stack: List[Tuple[int, np.ndarray]] = [(0, np.arange(queries.shape[0]))]
        while stack:
            node, active = stack.pop()
            counters.nodes_visited += 1
            counters.distance_evaluations += int(active.shape[0])
            near = _distances(queries[active], self.centroids[node]) <= self._bound(node) + r
            active = active[near]
            if active.shape[0] == 0:
                continue
            start, end = self.node_start[node], self.node_end[node]
            if self.is_leaf(node):
                counters.leaves_visited += 1
                counters.distance_evaluations += int(active.shape[0] * (end - start))
                block = self.points[start:end]
                diff = queries[active][:, None, :] - block[None, :, :]
                dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
                rows, cols = np.nonzero(dist <= r)
                leaf_ids = self.ids[start:end]
                for row, col in zip(rows.tolist(), cols.tolist()):
                    results[int(active[row])].append(int(leaf_ids[col]))
            else:
                stack.append((int(self.node_right[node]), active))
                stack.append((int(self.node_left[node]), active))
        for matches in results:
            matches.sort()
        return results

    def knn(
        self, q: np.ndarray, k: int, counters: Optional[QueryCounters] = None
    ) -> List[Tuple[int, float]]:
        """k nearest (id, distance), ascending by distance then id."""
        q = self._check_query(q)
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        if k > self.size:
            raise KTooLargeError(f"k={k} exceeds the {self.size} indexed points")
        counters = counters if counters is not None else QueryCounters()
        counters.probes += 1

        # max-heap of the best k as (-dist, -id)
        best: List[Tuple[float, int]] = []
        counters.distance_evaluations += 1
        frontier = [(self._lower_bound(q, 0), 0)]
        while frontier:
            bound, node = heapq.heappop(frontier)
            if len(best) == k and bound > -best[0][0]:
                break
            counters.nodes_visited += 1
            start, end = self.node_start[node], self.node_end[node]
            if self.is_leaf(node):
                counters.leaves_visited += 1
                counters.distance_evaluations += int(end - start)
                dists = _distances(self.points[start:end], q)
                for pid, dist in zip(self.ids[start:end].tolist(), dists.tolist()):
                    candidate = (-dist, -pid)
                    if len(best) < k:
                        heapq.heappush(best, candidate)
                    elif candidate > best[0]:
                        heapq.heapreplace(best, candidate)
            else:
                for child in (self.node_left[node], self.node_right[node]):
                    counters.distance_evaluations += 1
                    heapq.heappush(frontier, (self._lower_bound(q, int(child)), int(child)))
        ranked = [(-neg_id, -neg_dist) for neg_dist, neg_id in best]
        return sorted(ranked, key=lambda item: (item[1], item[0]))

    def _lower_bound(self, q: np.ndarray, node: int) -> float:
        return max(0.0, float(np.linalg.norm(q - self.centroids[node])) - self._bound(node))

    def check_invariants(self) -> None:
        """Raise AssertionError if a point falls outside a ball or a point is lost."""
        for node in range(self.node_count):
            start, end = self.node_start[node], self.node_end[node]
            dist = _distances(self.points[start:end], self.centroids[node])
            assert np.all(dist <= self._bound(node)), f"node {node} does not cover its points"
            if not self.is_leaf(node):
                left, right = self.node_left[node], self.node_right[node]
                assert self.node_start[left] == start and self.node_end[right] == end
                assert self.node_end[left] == self.node_start[right]
        leaves = self.node_left < 0
        assert int(np.sum(self.node_end[leaves] - self.node_start[leaves])) == self.size


def _as_matrix(points: Iterable[Tuple[int, Sequence[float]]]) -> Tuple[np.ndarray, np.ndarray]:
    ids: List[int] = []
    rows: List[np.ndarray] = []
    dim: Optional[int] = None
    for pid, vector in points:
        row = np.asarray(vector, dtype=np.float64).reshape(-1)
        if dim is None:
            dim = row.shape[0]
        elif row.shape[0] != dim:
            raise MixedDimensionError(f"Point {pid} has dimension {row.shape[0]}, expected {dim}")
        ids.append(int(pid))
        rows.append(row)
    if not rows:
        raise EmptyInputError("Cannot build a Ball-tree over zero points")
    return np.asarray(ids, dtype=np.uint64), np.vstack(rows)


def build_balltree(
    points: Iterable[Tuple[int, Sequence[float]]], leaf_size: int = DEFAULT_LEAF_SIZE
) -> BallTreeIndex:
    """Build over (patch_id, vector) pairs."""
    ids, matrix = _as_matrix(points)
    return build_balltree_arrays(ids, matrix, leaf_size)


def build_balltree_arrays(ids: np.ndarray, matrix: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> BallTreeIndex:
    if leaf_size < 1:
        raise ValueError(f"leaf_size must be positive, got {leaf_size}")
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise EmptyInputError("Cannot build a Ball-tree over zero points")
    ids = np.asarray(ids, dtype=np.uint64)
    n = matrix.shape[0]
    order = np.arange(n)

    starts: List[int] = []
    ends: List[int] = []
    lefts: List[int] = []
    rights: List[int] = []
    centroids: List[np.ndarray] = []
    radii: List[float] = []

    # (start, end, parent, is_right); right pushed first so left is numbered first
    stack: List[Tuple[int, int, int, bool]] = [(0, n, -1, False)]
    while stack:
        start, end, parent, is_right = stack.pop()
        node = len(starts)
        if parent >= 0:
            (rights if is_right else lefts)[parent] = node
        members = matrix[order[start:end]]
        centroid = members.mean(axis=0)
        starts.append(start)
        ends.append(end)
        lefts.append(-1)
        rights.append(-1)
        centroids.append(centroid)
        radii.append(float(_distances(members, centroid).max()))

        count = end - start
        if count <= leaf_size:
            continue
        spread = members.max(axis=0) - members.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0:
            continue
        values = members[:, dim]
        median = np.sort(values, kind="stable")[(count - 1) // 2]
        lower = values <= median
        if lower.all():
            lower = values < median
        segment = order[start:end]
        order[start:end] = np.concatenate([segment[lower], segment[~lower]])
        split = start + int(np.count_nonzero(lower))
        stack.append((split, end, node, True))
        stack.append((start, split, node, False))

    return BallTreeIndex(
        ids=ids[order],
        points=np.ascontiguousarray(matrix[order]),
        leaf_size=leaf_size,
        node_start=np.asarray(starts, dtype=np.int64),
        node_end=np.asarray(ends, dtype=np.int64),
        node_left=np.asarray(lefts, dtype=np.int64),
        node_right=np.asarray(rights, dtype=np.int64),
        centroids=np.vstack(centroids),
        radii=np.asarray(radii, dtype=np.float64),
    )


def balltree_within(idx: BallTreeIndex, q: Sequence[float], r: float, counters: Optional[QueryCounters] = None) -> Set[int]:
    return idx.within(np.asarray(q, dtype=np.float64), r, counters)


def balltree_within_many(
    idx: BallTreeIndex, queries: np.ndarray, r: float, counters: Optional[QueryCounters] = None
) -> List[List[int]]:
    return idx.within_many(queries, r, counters)


def balltree_knn(
    idx: BallTreeIndex, q: Sequence[float], k: int, counters: Optional[QueryCounters] = None
) -> List[Tuple[int, float]]:
    return idx.knn(np.asarray(q, dtype=np.float64), k, counters)


class GrowingBallTree:
    """
    Insert-only metric set answering "anything within r of q?".

    New points collect in a flat buffer; a full buffer is frozen into a
    Ball-tree, and trees of equal size are merged by rebuilding (binary
    counter), so each point is rebuilt O(log n) times.
    """

    def __init__(self, dim: int, leaf_size: int = DEFAULT_LEAF_SIZE, buffer_size: int = 64):
        self.dim = dim
        self.leaf_size = leaf_size
        self.buffer_size = buffer_size
        self._buffer_ids: List[int] = []
        self._buffer_rows: List[np.ndarray] = []
        self._trees: Dict[int, BallTreeIndex] = {}

    def __len__(self) -> int:
        return len(self._buffer_ids) + sum(tree.size for tree in self._trees.values())

    def add(self, pid: int, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionMismatchError(f"Vector of shape {vector.shape} in a {self.dim}-d set")
        self._buffer_ids.append(int(pid))
        self._buffer_rows.append(vector)
        if len(self._buffer_ids) >= self.buffer_size:
            self._freeze()

    def _freeze(self) -> None:
        ids = np.asarray(self._buffer_ids, dtype=np.uint64)
        rows = np.vstack(self._buffer_rows)
        self._buffer_ids, self._buffer_rows = [], []
        level = 0
        while level in self._trees:
            other = self._trees.pop(level)
            ids = np.concatenate([other.ids, ids])
            rows = np.vstack([other.points, rows])
            level += 1
        self._trees[level] = build_balltree_arrays(ids, rows, self.leaf_size)

    def nearest_within(self, q: np.ndarray, r: float, counters: Optional[QueryCounters] = None) -> Optional[int]:
        """Smallest id within r of q, or None."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"Query of shape {q.shape} in a {self.dim}-d set")
        hits: Set[int] = set()
        if self._buffer_rows:
            dist = _distances(np.vstack(self._buffer_rows), q)
            if counters is not None:
                counters.distance_evaluations += int(dist.shape[0])
            hits.update(pid for pid, ok in zip(self._buffer_ids, (dist <= r).tolist()) if ok)
        for level in sorted(self._trees):
            hits |= self._trees[level].within(q, r, counters)
        return min(hits) if hits else None
