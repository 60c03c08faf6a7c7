"""
Plan validation, compilation and execution.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field

from shared.config.settings import BaseConfig
from shared.store.record_store import RecordStoreError

from ..core.metadata import BoundingBox, MetaTag
from ..core.operator import Operator, OperatorStats, PatchTuple
from ..core.schema import PatchSchema
from ..errors import PlanValidationError
from ..etl.collection import PatchCollection, open_collection
from ..etl.validation import key_tag
from ..index.balltree import DEFAULT_LEAF_SIZE
from ..index.keyed import HASH_TAGS, ORDERED_TAGS
from ..index.persist import list_indexes, load_index
from ..index.rtree import DEFAULT_CAPACITY, DEFAULT_MIN_FILL
from ..storage.video_store import IoCounters, VideoStore, open_store
from .operators import (
    DEFAULT_PROBE_BATCH,
    Backtrace,
    CountBy,
    Dedup,
    IndexJoin,
    IndexKindName,
    IndexScan,
    NestedLoopJoin,
    Scan,
    Select,
    SimJoin,
)
from .plan import (
    BacktraceNode,
    CountByNode,
    DedupNode,
    IndexJoinNode,
    IndexScanNode,
    NestedLoopJoinNode,
    PlanNode,
    ScanNode,
    SelectNode,
    SimJoinNode,
    children_of,
)
from .predicates import check_predicate

logger = structlog.get_logger(__name__)

CSV_COLUMNS = ["operator", "wall_ms", "self_ms", "tuples_out", "index_probes"]


class ExecOptions(BaseModel):
    """Engine defaults a plan falls back on."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sim_tau: float = Field(default=0.1, ge=0.0)
    dedup_tau: float = Field(default=0.1, ge=0.0)
    probe_batch: int = Field(default=DEFAULT_PROBE_BATCH, ge=1)
    leaf_size: int = Field(default=DEFAULT_LEAF_SIZE, ge=1)
    rtree_capacity: int = Field(default=DEFAULT_CAPACITY, ge=4)
    rtree_min_fill: float = Field(default=DEFAULT_MIN_FILL, gt=0.0, le=0.5)

    @classmethod
    def from_config(cls, config: BaseConfig) -> ExecOptions:
        return cls(
            sim_tau=config.sim_tau,
            dedup_tau=config.dedup_tau,
            probe_batch=config.probe_batch,
            leaf_size=config.leaf_size,
            rtree_capacity=config.rtree_capacity,
            rtree_min_fill=config.rtree_min_fill,
        )


class _Resources:
    """Collections and stores opened while validating or compiling one plan."""

    def __init__(self):
        self.collections: Dict[str, PatchCollection] = {}
        self.stores: Dict[str, VideoStore] = {}

    def collection(self, path: str) -> PatchCollection:
        if path not in self.collections:
            self.collections[path] = open_collection(path)
        return self.collections[path]

    def store(self, path: str) -> VideoStore:
        if path not in self.stores:
            self.stores[path] = open_store(path)
        return self.stores[path]


# validation

def _label(path: str, node: BaseModel) -> str:
    return f"{path} ({node.node})"


def _feature_dim(schema: PatchSchema) -> Optional[int]:
    """Known feature dimension, -1 for an unknown one, None if not feature-shaped."""
    if schema.data_shape is None:
        return -1
    return schema.data_shape[0] if schema.is_feature else None


class _Validator:
    def __init__(self, resources: _Resources):
        self.resources = resources
        self.violations: List[str] = []

    def fail(self, path: str, node: BaseModel, message: str) -> None:
        self.violations.append(f"{_label(path, node)}: {message}")

    def _collection_schema(self, path: str, node: BaseModel, location: str) -> Optional[PatchSchema]:
        try:
            return self.resources.collection(location).schema
        except RecordStoreError as e:
            self.fail(path, node, f"cannot open collection: {e}")
            return None

    def infer(self, node: BaseModel, path: str = "root") -> List[PatchSchema]:
        inputs = {name: self.infer(child, f"{path}.{name}") for name, child in children_of(node)}

        if isinstance(node, ScanNode):
            return [self._collection_schema(path, node, node.collection) or PatchSchema()]

        if isinstance(node, IndexScanNode):
            schema = self._collection_schema(path, node, node.collection)
            if schema is not None and node.index not in list_indexes(self.resources.collection(node.collection)):
                self.fail(path, node, f"no index named '{node.index}' in {node.collection}")
            return [schema or PatchSchema()]

        if isinstance(node, SelectNode):
            child = inputs["child"]
            for problem in check_predicate(node.predicate, child):
                self.fail(path, node, problem)
            return child

        if isinstance(node, NestedLoopJoinNode):
            joined = inputs["left"] + inputs["right"]
            for problem in check_predicate(node.predicate, joined):
                self.fail(path, node, problem)
            return joined

        if isinstance(node, IndexJoinNode):
            return self._index_join(node, path, inputs["left"], inputs["right"])

        if isinstance(node, SimJoinNode):
            left, right = inputs["left"], inputs["right"]
            dims = []
            for side, schemas, pos in (("left", left, node.left_pos), ("right", right, node.right_pos)):
                if pos >= len(schemas):
                    self.fail(path, node, f"{side} position {pos} is out of range")
                    continue
                dim = _feature_dim(schemas[pos])
                if dim is None:
                    self.fail(path, node, f"{side} side needs feature data, found {schemas[pos].data_shape}")
                elif dim >= 0:
                    dims.append(dim)
            if len(set(dims)) > 1:
                self.fail(path, node, f"dimension mismatch: left [{dims[0]}] vs right [{dims[1]}]")
            joined = left + right
            if node.residual is not None:
                for problem in check_predicate(node.residual, joined):
                    self.fail(path, node, problem)
            return joined

        if isinstance(node, DedupNode):
            child = list(inputs["child"])
            if node.pos >= len(child):
                self.fail(path, node, f"position {node.pos} is out of range")
                return child
            if _feature_dim(child[node.pos]) is None:
                self.fail(path, node, f"needs feature data, found {child[node.pos].data_shape}")
            if node.collect is not None:
                if key_tag(child[node.pos], node.collect) is None:
                    self.fail(path, node, f"key '{node.collect}' is not produced by the input")
                child[node.pos] = child[node.pos].derive(
                    keep_shape=True, **{f"group_{node.collect}": MetaTag.STRING_LIST}
                )
            return child

        if isinstance(node, CountByNode):
            child = inputs["child"]
            if node.pos >= len(child):
                self.fail(path, node, f"position {node.pos} is out of range")
                return [PatchSchema()]
            if node.key not in ("patch_id", "video_id") and key_tag(child[node.pos], node.key) is None:
                self.fail(path, node, f"key '{node.key}' is not produced by the input")
            return [child[node.pos].derive(data_shape=[0], count=MetaTag.INTEGER)]

        if isinstance(node, BacktraceNode):
            child = inputs["child"]
            if node.pos >= len(child):
                self.fail(path, node, f"position {node.pos} is out of range")
            try:
                self.resources.store(node.store)
            except RecordStoreError as e:
                self.fail(path, node, f"cannot open base store: {e}")
            return child + [PatchSchema.pixels()]

        raise TypeError(f"Unknown plan node {type(node).__name__}")

    def _index_join(
        self, node: IndexJoinNode, path: str, left: List[PatchSchema], right: List[PatchSchema]
    ) -> List[PatchSchema]:
        joined = left + right
        if len(right) != 1:
            self.fail(path, node, f"the indexed side must produce single patches, not {len(right)}-tuples")
        if node.index_name is not None and not isinstance(node.right, ScanNode):
            self.fail(path, node, "a persisted index needs a scan on the right side")
        if node.left_pos >= len(left):
            self.fail(path, node, f"left position {node.left_pos} is out of range")
            return joined
        outer, inner = left[node.left_pos], right[0]

        if node.kind in (IndexKindName.HASH, IndexKindName.ORDERED):
            left_key = node.left_key or node.right_key
            right_key = node.right_key or node.left_key
            if left_key is None:
                self.fail(path, node, f"{node.kind.value} index join needs a key")
                return joined
            wanted = HASH_TAGS if node.kind is IndexKindName.HASH else ORDERED_TAGS
            for side, schema, key in (("left", outer, left_key), ("right", inner, right_key)):
                tag = key_tag(schema, key)
                if tag is None:
                    self.fail(path, node, f"{side} key '{key}' is not produced")
                elif tag not in wanted:
                    self.fail(path, node, f"{node.kind.value} index cannot key on '{key}' ({tag.value})")
            has_range = node.lo_offset is not None or node.hi_offset is not None
            if has_range and (node.kind is not IndexKindName.ORDERED or node.lo_offset is None or node.hi_offset is None):
                self.fail(path, node, "range offsets need an ordered index and both lo_offset and hi_offset")
        elif node.kind is IndexKindName.RTREE:
            for side, schema in (("left", outer), ("right", inner)):
                if schema.required_keys.get("bbox") is not MetaTag.BBOX:
                    self.fail(path, node, f"{side} side has no 'bbox'")
        else:
            if node.tau is None:
                self.fail(path, node, "balltree index join needs tau")
            dims = [_feature_dim(outer), _feature_dim(inner)]
            if None in dims:
                self.fail(path, node, "balltree index join needs feature data on both sides")
            elif dims[0] >= 0 and dims[1] >= 0 and dims[0] != dims[1]:
                self.fail(path, node, f"dimension mismatch: left [{dims[0]}] vs right [{dims[1]}]")

        if node.residual is not None:
            for problem in check_predicate(node.residual, joined):
                self.fail(path, node, problem)
        return joined


def validate_plan(plan: BaseModel) -> List[str]:
    """Every violation in ``plan``, each naming the node it was found at."""
    validator = _Validator(_Resources())
    validator.infer(plan)
    return validator.violations


# compilation

class _Compiler:
    def __init__(self, options: ExecOptions, io: IoCounters, resources: _Resources):
        self.options = options
        self.io = io
        self.patch_io = IoCounters()
        self.resources = resources

    def compile(self, node: BaseModel) -> Operator:
        opts = self.options
        if isinstance(node, ScanNode):
            return Scan(self.resources.collection(node.collection), self.patch_io)
        if isinstance(node, IndexScanNode):
            collection = self.resources.collection(node.collection)
            return IndexScan(
                collection,
                load_index(collection, node.index),
                value=node.value,
                lo=node.lo,
                hi=node.hi,
                box=BoundingBox.from_tuple(node.box) if node.box is not None else None,
                mode=node.mode,
                vector=node.vector,
                tau=node.tau,
                patch_io=self.patch_io,
            )
        if isinstance(node, SelectNode):
            return Select(self.compile(node.child), node.predicate)
        if isinstance(node, NestedLoopJoinNode):
            return NestedLoopJoin(self.compile(node.left), self.compile(node.right), node.predicate)
        if isinstance(node, IndexJoinNode):
            index = resolve = None
            if node.index_name is not None:
                collection = self.resources.collection(node.right.collection)
                index = load_index(collection, node.index_name)
                patch_io = self.patch_io
                resolve = lambda ids: collection.get_many(ids, patch_io)  # noqa: E731
            return IndexJoin(
                self.compile(node.left),
                self.compile(node.right),
                node.kind,
                left_key=node.left_key,
                right_key=node.right_key,
                left_pos=node.left_pos,
                lo_offset=node.lo_offset,
                hi_offset=node.hi_offset,
                mode=node.mode,
                tau=node.tau,
                residual=node.residual,
                index=index,
                resolve=resolve,
                leaf_size=opts.leaf_size,
                capacity=opts.rtree_capacity,
                min_fill=opts.rtree_min_fill,
            )
        if isinstance(node, SimJoinNode):
            return SimJoin(
                self.compile(node.left),
                self.compile(node.right),
                opts.sim_tau if node.tau is None else node.tau,
                build_side=node.build_side,
                left_pos=node.left_pos,
                right_pos=node.right_pos,
                residual=node.residual,
                probe_batch=opts.probe_batch,
                leaf_size=opts.leaf_size,
            )
        if isinstance(node, DedupNode):
            return Dedup(
                self.compile(node.child),
                opts.dedup_tau if node.tau is None else node.tau,
                collect=node.collect,
                use_index=node.use_index,
                pos=node.pos,
                leaf_size=opts.leaf_size,
            )
        if isinstance(node, CountByNode):
            return CountBy(self.compile(node.child), node.key, node.pos)
        if isinstance(node, BacktraceNode):
            return Backtrace(self.compile(node.child), self.resources.store(node.store), node.mode, node.pos, self.io)
        raise TypeError(f"Unknown plan node {type(node).__name__}")


def compile_plan(plan: BaseModel, options: Optional[ExecOptions] = None, io: Optional[IoCounters] = None) -> Operator:
    return _Compiler(options or ExecOptions(), io if io is not None else IoCounters(), _Resources()).compile(plan)


# execution

@dataclass
class ExecStats:
    operators: List[Tuple[int, OperatorStats]] = field(default_factory=list)
    io: IoCounters = field(default_factory=IoCounters)
    patch_io: IoCounters = field(default_factory=IoCounters)
    result_count: int = 0

    @property
    def index_probes(self) -> int:
        return sum(stats.index_probes for _, stats in self.operators)

    @property
    def root(self) -> OperatorStats:
        return self.operators[0][1]

    def render(self) -> str:
        """Flat ``key=value`` lines."""
        lines = [f"result.tuples={self.result_count}", f"result.index_probes={self.index_probes}"]
        for key, value in self.io.as_dict().items():
            lines.append(f"io.{key}={value}")
        for key, value in self.patch_io.as_dict().items():
            lines.append(f"patch_io.{key}={value}")
        for number, (depth, stats) in enumerate(self.operators):
            prefix = f"op.{number}.{stats.operator}"
            lines.append(f"{prefix}.depth={depth}")
            lines.append(f"{prefix}.wall_ms={stats.wall_ns / 1e6:.3f}")
            lines.append(f"{prefix}.self_ms={stats.self_ns / 1e6:.3f}")
            lines.append(f"{prefix}.tuples_out={stats.tuples_out}")
            lines.append(f"{prefix}.index_probes={stats.index_probes}")
        return "\n".join(lines)

    def csv_rows(self) -> List[Dict[str, object]]:
        return [
            {
                "operator": stats.operator,
                "wall_ms": round(stats.wall_ns / 1e6, 3),
                "self_ms": round(stats.self_ns / 1e6, 3),
                "tuples_out": stats.tuples_out,
                "index_probes": stats.index_probes,
            }
            for _, stats in self.operators
        ]

    def to_csv(self) -> str:
        buffer = _io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.csv_rows())
        return buffer.getvalue()


def _depths(root: Operator) -> List[Tuple[int, Operator]]:
    out: List[Tuple[int, Operator]] = []
    stack = [(0, root)]
    while stack:
        depth, op = stack.pop()
        out.append((depth, op))
        stack.extend((depth + 1, child) for child in reversed(op.children))
    return out


class Execution:
    """A running plan: iterate it for tuples, read ``stats`` afterwards."""

    def __init__(self, root: Operator, io: IoCounters):
        self.root = root
        self.io = io
        self._count = 0

    def __iter__(self) -> Iterator[PatchTuple]:
        for tup in self.root:
            self._count += 1
            yield tup

    def drain(self) -> List[PatchTuple]:
        return list(self)

    @property
    def stats(self) -> ExecStats:
        ops = list(self.root.walk())
        return ExecStats(
            operators=[(depth, op.stats) for depth, op in _depths(self.root)],
            io=_sum_counters([self.io] + [getattr(op, "io", None) for op in ops]),
            patch_io=_sum_counters([getattr(op, "patch_io", None) for op in ops]),
            result_count=self._count,
        )


def _sum_counters(sources: List[Optional[IoCounters]]) -> IoCounters:
    """Total of the distinct counter objects in ``sources``."""
    total = IoCounters()
    seen = set()
    for counters in sources:
        if counters is not None and id(counters) not in seen:
            seen.add(id(counters))
            total.add(counters)
    return total


def execute(
    plan: Union[Operator, BaseModel],
    options: Optional[ExecOptions] = None,
    io: Optional[IoCounters] = None,
) -> Execution:
    """
    Start a plan. Plan trees are validated first and raise
    PlanValidationError with every violation; operator trees run as given.
    Nothing is evaluated until the execution is iterated.
    """
    io = io if io is not None else IoCounters()
    if isinstance(plan, Operator):
        return Execution(plan, io)
    violations = validate_plan(plan)
    if violations:
        logger.warning("Plan rejected", violations=len(violations))
        raise PlanValidationError(violations)
    return Execution(compile_plan(plan, options, io), io)


def run(
    plan: Union[Operator, BaseModel],
    options: Optional[ExecOptions] = None,
) -> Tuple[List[PatchTuple], ExecStats]:
    execution = execute(plan, options)
    results = execution.drain()
    stats = execution.stats
    logger.debug(
        "Plan finished",
        tuples=stats.result_count,
        wall_ms=round(stats.root.wall_ns / 1e6, 3),
        index_probes=stats.index_probes,
        **{f"io_{k}": v for k, v in stats.io.as_dict().items()},
    )
    return results, stats


__all__ = [
    "ExecOptions",
    "ExecStats",
    "Execution",
    "PlanNode",
    "compile_plan",
    "execute",
    "run",
    "validate_plan",
]
