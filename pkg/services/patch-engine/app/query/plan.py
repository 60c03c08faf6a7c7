"""
Declarative plan trees.

Plan nodes name their inputs by path (materialized collections, stored
videos, persisted indexes) so a whole plan can live in a JSON file. The
executor validates a tree and compiles it into operators.
"""

from __future__ import annotations

from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..index.rtree import RTreeMode
from .operators import BacktraceMode, IndexKindName
from .predicates import Predicate


class _Node(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScanNode(_Node):
    node: Literal["scan"] = "scan"
    collection: str


class IndexScanNode(_Node):
    """One probe of an index persisted in ``collection`` under ``index``."""

    node: Literal["index_scan"] = "index_scan"
    collection: str
    index: str
    value: Optional[Union[int, float, str]] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    box: Optional[Tuple[int, int, int, int]] = None
    mode: RTreeMode = RTreeMode.INTERSECTS
    vector: Optional[List[float]] = None
    tau: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _one_probe(self) -> IndexScanNode:
        given = sum(
            (self.value is not None, self.lo is not None or self.hi is not None, self.box is not None, self.vector is not None)
        )
        if given != 1:
            raise ValueError("index_scan needs exactly one of value, lo/hi, box or vector")
        if (self.lo is None) != (self.hi is None):
            raise ValueError("a range probe needs both lo and hi")
        if self.vector is not None and self.tau is None:
            raise ValueError("a vector probe needs tau")
        return self


class SelectNode(_Node):
    node: Literal["select"] = "select"
    child: PlanNode
    predicate: Predicate


class NestedLoopJoinNode(_Node):
    node: Literal["nested_loop_join"] = "nested_loop_join"
    left: PlanNode
    right: PlanNode
    predicate: Predicate


class IndexJoinNode(_Node):
    """
    Index join; ``index_name`` probes an index persisted with the right
    collection (the right side must then be a scan), otherwise the right
    side is indexed on the fly.
    """

    node: Literal["index_join"] = "index_join"
    left: PlanNode
    right: PlanNode
    kind: IndexKindName
    left_key: Optional[str] = None
    right_key: Optional[str] = None
    left_pos: int = Field(default=0, ge=0)
    lo_offset: Optional[float] = None
    hi_offset: Optional[float] = None
    mode: RTreeMode = RTreeMode.INTERSECTS
    tau: Optional[float] = Field(default=None, ge=0.0)
    residual: Optional[Predicate] = None
    index_name: Optional[str] = None


class SimJoinNode(_Node):
    node: Literal["sim_join"] = "sim_join"
    left: PlanNode
    right: PlanNode
    tau: Optional[float] = Field(default=None, ge=0.0)
    build_side: Literal["auto", "left", "right"] = "auto"
    left_pos: int = Field(default=0, ge=0)
    right_pos: int = Field(default=0, ge=0)
    residual: Optional[Predicate] = None


class DedupNode(_Node):
    node: Literal["dedup"] = "dedup"
    child: PlanNode
    tau: Optional[float] = Field(default=None, ge=0.0)
    collect: Optional[str] = None
    use_index: bool = True
    pos: int = Field(default=0, ge=0)


class CountByNode(_Node):
    node: Literal["count_by"] = "count_by"
    child: PlanNode
    key: str
    pos: int = Field(default=0, ge=0)


class BacktraceNode(_Node):
    node: Literal["backtrace"] = "backtrace"
    child: PlanNode
    store: str
    mode: BacktraceMode = BacktraceMode.LINEAGE_INDEX
    pos: int = Field(default=0, ge=0)


PlanNode = Annotated[
    Union[
        ScanNode,
        IndexScanNode,
        SelectNode,
        NestedLoopJoinNode,
        IndexJoinNode,
        SimJoinNode,
        DedupNode,
        CountByNode,
        BacktraceNode,
    ],
    Field(discriminator="node"),
]

for _model in (SelectNode, NestedLoopJoinNode, IndexJoinNode, SimJoinNode, DedupNode, CountByNode, BacktraceNode):
    _model.model_rebuild()


def children_of(node: BaseModel) -> List[Tuple[str, BaseModel]]:
    """(field name, child) pairs of a plan node."""
    return [(name, getattr(node, name)) for name in ("child", "left", "right") if hasattr(node, name)]
