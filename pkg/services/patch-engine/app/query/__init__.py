"""Pull-iterator query execution over patch collections."""

from .executor import ExecOptions, ExecStats, Execution, compile_plan, execute, run, validate_plan
from .operators import (
    Backtrace,
    BacktraceMode,
    CountBy,
    Dedup,
    IndexJoin,
    IndexKindName,
    IndexScan,
    NestedLoopJoin,
    PatchSource,
    Scan,
    Select,
    SimJoin,
    backtrace,
    dedup,
    frame_of,
    sim_join,
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
)
from .predicates import (
    And,
    BoxContains,
    BoxOverlap,
    Compare,
    Contains,
    EuclideanWithin,
    Not,
    Or,
    Predicate,
    Ref,
    TupleBlock,
    all_of,
    check_predicate,
    cmp,
    eq,
    evaluate,
    evaluate_block,
)

__all__ = [
    "And",
    "Backtrace",
    "BacktraceMode",
    "BacktraceNode",
    "BoxContains",
    "BoxOverlap",
    "Compare",
    "Contains",
    "CountBy",
    "CountByNode",
    "Dedup",
    "DedupNode",
    "EuclideanWithin",
    "ExecOptions",
    "ExecStats",
    "Execution",
    "IndexJoin",
    "IndexJoinNode",
    "IndexKindName",
    "IndexScan",
    "IndexScanNode",
    "NestedLoopJoin",
    "NestedLoopJoinNode",
    "Not",
    "Or",
    "PatchSource",
    "PlanNode",
    "Predicate",
    "Ref",
    "Scan",
    "ScanNode",
    "Select",
    "SelectNode",
    "SimJoin",
    "SimJoinNode",
    "TupleBlock",
    "all_of",
    "backtrace",
    "check_predicate",
    "cmp",
    "compile_plan",
    "dedup",
    "eq",
    "evaluate",
    "evaluate_block",
    "execute",
    "frame_of",
    "run",
    "sim_join",
    "validate_plan",
]
