"""
Predicates over patch tuples.

A predicate is a tree of pydantic models so it can be written in a plan
file. Evaluation is block-wise: a predicate is applied to a whole block of
tuples at once, optionally bound to one outer tuple (the nested-loop
join case), and returns a boolean mask. Positions below the outer tuple's
arity refer to the outer tuple; the rest refer to the block.

A reference to a key the patch does not carry evaluates to false. A
comparison between incompatible tags raises TagMismatchError.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Annotated, Callable, Dict, FrozenSet, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.metadata import MetaTag
from ..core.operator import PatchTuple
from ..core.patch import Patch
from ..core.schema import PatchSchema
from ..errors import DimensionMismatchError, TagMismatchError
from ..etl.validation import key_tag, literal_fits

PSEUDO_KEYS: Dict[str, MetaTag] = {"patch_id": MetaTag.INTEGER, "video_id": MetaTag.STRING}
NUMERIC = frozenset({MetaTag.INTEGER, MetaTag.FLOAT})

Scalar = Union[int, float, str]

_OPS: Dict[str, Callable] = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


class Ref(BaseModel):
    """Metadata key ``key`` of the patch at tuple position ``pos``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    pos: int = Field(default=0, ge=0)
    key: str = Field(min_length=1)


class Compare(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["compare"] = "compare"
    left: Ref
    cmp: Literal["=", "!=", "<", "<=", ">", ">="] = "="
    value: Optional[Scalar] = None
    right: Optional[Ref] = None
    offset: float = 0.0

    @model_validator(mode="after")
    def _one_operand(self) -> Compare:
        if (self.value is None) == (self.right is None):
            raise ValueError("compare needs exactly one of 'value' or 'right'")
        if self.offset and self.right is None:
            raise ValueError("'offset' only applies to ref-to-ref comparisons")
        return self


class Contains(BaseModel):
    """A string-list value holds ``value``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["contains"] = "contains"
    ref: Ref
    value: str


class BoxOverlap(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["box_overlap"] = "box_overlap"
    left: Ref
    right: Ref
    axis: Literal["x", "y", "both"] = "both"


class BoxContains(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["box_contains"] = "box_contains"
    outer: Ref
    inner: Ref


class EuclideanWithin(BaseModel):
    """||data(left) - data(right)|| <= tau, or against a constant vector."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["euclidean_within"] = "euclidean_within"
    left: int = Field(default=0, ge=0)
    right: Optional[int] = Field(default=None, ge=0)
    vector: Optional[List[float]] = None
    tau: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _one_operand(self) -> EuclideanWithin:
        if (self.right is None) == (self.vector is None):
            raise ValueError("euclidean_within needs exactly one of 'right' or 'vector'")
        return self


class And(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["and"] = "and"
    terms: List[Predicate] = Field(min_length=1)


class Or(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["or"] = "or"
    terms: List[Predicate] = Field(min_length=1)


class Not(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    op: Literal["not"] = "not"
    term: Predicate


Predicate = Annotated[
    Union[Compare, Contains, BoxOverlap, BoxContains, EuclideanWithin, And, Or, Not],
    Field(discriminator="op"),
]

And.model_rebuild()
Or.model_rebuild()
Not.model_rebuild()


# shorthands used by the bench plans and tests

def eq(key: str, value: Scalar, pos: int = 0) -> Compare:
    return Compare(left=Ref(pos=pos, key=key), cmp="=", value=value)


def cmp(left: Tuple[int, str], op: str, right: Tuple[int, str], offset: float = 0.0) -> Compare:
    return Compare(left=Ref(pos=left[0], key=left[1]), cmp=op, right=Ref(pos=right[0], key=right[1]), offset=offset)


def all_of(*terms) -> And:
    return And(terms=list(terms))


# evaluation

def patch_value(patch: Patch, key: str) -> Tuple[object, Optional[MetaTag]]:
    """(value, tag) of ``key`` including pseudo keys and bbox coordinates; (None, None) if absent."""
    if key == "patch_id":
        return patch.patch_id, MetaTag.INTEGER
    if key == "video_id":
        return patch.video_id, MetaTag.STRING
    if key.startswith("bbox."):
        box = patch.bbox
        coord = key.split(".", 1)[1]
        if box is None or coord not in ("x1", "y1", "x2", "y2"):
            return None, None
        return getattr(box, coord), MetaTag.INTEGER
    value = patch.metadata.get(key)
    if value is None:
        return None, None
    return value.value, value.tag


@dataclass
class Column:
    values: np.ndarray
    present: np.ndarray
    tags: FrozenSet[MetaTag]


class TupleBlock:
    """A block of tuples with lazily extracted, cached columns."""

    def __init__(self, tuples: Sequence[PatchTuple]):
        self.tuples = tuples
        self._columns: Dict[Tuple[int, str], Column] = {}
        self._data: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.tuples)

    def column(self, pos: int, key: str) -> Column:
        cached = self._columns.get((pos, key))
        if cached is None:
            cached = self._columns[(pos, key)] = self._build(pos, key)
        return cached

    def _build(self, pos: int, key: str) -> Column:
        raw = [patch_value(t[pos], key) for t in self.tuples]
        present = np.fromiter((tag is not None for _, tag in raw), dtype=bool, count=len(raw))
        tags = frozenset(tag for _, tag in raw if tag is not None)
        if tags and tags <= NUMERIC and key != "patch_id":
            values = np.array([0 if v is None else v for v, _ in raw], dtype=np.float64)
        elif tags == {MetaTag.BBOX}:
            values = np.array([(0, 0, 0, 0) if v is None else v.as_tuple() for v, _ in raw], dtype=np.int64)
            values = values.reshape(len(raw), 4)
        else:
            # missing strings become "" so ordering comparisons stay total; present masks them out
            fill = "" if tags == {MetaTag.STRING} else None
            values = np.empty(len(raw), dtype=object)
            for row, (value, _) in enumerate(raw):
                values[row] = fill if value is None else value
        return Column(values, present, tags)

    def data(self, pos: int) -> np.ndarray:
        cached = self._data.get(pos)
        if cached is None:
            rows = [t[pos].features() for t in self.tuples]
            dims = {row.shape for row in rows}
            if len(dims) > 1:
                raise DimensionMismatchError(f"Mixed data shapes at position {pos}: {sorted(dims)}")
            cached = self._data[pos] = np.vstack(rows) if rows else np.zeros((0, 0))
        return cached


class _Binding:
    def __init__(self, block: TupleBlock, outer: Optional[TupleBlock]):
        self.block = block
        self.outer = outer
        self.split = len(outer.tuples[0]) if outer is not None and len(outer) else 0

    def column(self, ref: Ref) -> Column:
        if ref.pos < self.split:
            return self.outer.column(ref.pos, ref.key)
        return self.block.column(ref.pos - self.split, ref.key)

    def data(self, pos: int) -> np.ndarray:
        if pos < self.split:
            return self.outer.data(pos)
        return self.block.data(pos - self.split)


def _tag_group(tags: FrozenSet[MetaTag]) -> str:
    if not tags:
        return "empty"
    if tags <= NUMERIC:
        return "numeric"
    if tags == {MetaTag.STRING}:
        return "string"
    return "other"


def _literal_group(value: Scalar) -> str:
    return "string" if isinstance(value, str) else "numeric"


def _compare(pred: Compare, env: _Binding) -> np.ndarray:
    left = env.column(pred.left)
    if pred.right is None:
        group = _tag_group(left.tags)
        if group not in ("empty", _literal_group(pred.value)):
            raise TagMismatchError(
                f"Cannot compare '{pred.left.key}' ({', '.join(sorted(t.value for t in left.tags))}) with {pred.value!r}"
            )
        if group == "empty":
            return np.zeros(left.present.shape, dtype=bool)
        hit = np.asarray(_OPS[pred.cmp](left.values, pred.value), dtype=bool)
        return hit & left.present

    right = env.column(pred.right)
    groups = {_tag_group(left.tags), _tag_group(right.tags)} - {"empty"}
    if len(groups) > 1 or groups & {"other"} or (pred.offset and groups == {"string"}):
        raise TagMismatchError(f"Cannot compare '{pred.left.key}' with '{pred.right.key}'")
    if not groups:
        return np.zeros(np.broadcast(left.present, right.present).shape, dtype=bool)
    other = right.values + pred.offset if pred.offset else right.values
    hit = np.asarray(_OPS[pred.cmp](left.values, other), dtype=bool)
    return hit & left.present & right.present


def _boxes(column: Column, key: str) -> np.ndarray:
    if column.tags and column.tags != {MetaTag.BBOX}:
        raise TagMismatchError(f"'{key}' is not a bounding box")
    if not column.tags:
        return np.zeros((column.present.shape[0], 4), dtype=np.int64)
    return column.values


def _box_overlap(pred: BoxOverlap, env: _Binding) -> np.ndarray:
    a_col, b_col = env.column(pred.left), env.column(pred.right)
    a, b = _boxes(a_col, pred.left.key), _boxes(b_col, pred.right.key)
    hit = np.ones(np.broadcast(a[:, 0], b[:, 0]).shape, dtype=bool)
    if pred.axis in ("x", "both"):
        hit &= (a[:, 0] < b[:, 2]) & (b[:, 0] < a[:, 2])
    if pred.axis in ("y", "both"):
        hit &= (a[:, 1] < b[:, 3]) & (b[:, 1] < a[:, 3])
    return hit & a_col.present & b_col.present


def _box_contains(pred: BoxContains, env: _Binding) -> np.ndarray:
    o_col, i_col = env.column(pred.outer), env.column(pred.inner)
    o, i = _boxes(o_col, pred.outer.key), _boxes(i_col, pred.inner.key)
    hit = (o[:, 0] <= i[:, 0]) & (o[:, 1] <= i[:, 1]) & (i[:, 2] <= o[:, 2]) & (i[:, 3] <= o[:, 3])
    return hit & o_col.present & i_col.present


def _euclidean(pred: EuclideanWithin, env: _Binding) -> np.ndarray:
    a = env.data(pred.left)
    b = np.asarray(pred.vector, dtype=np.float64)[None, :] if pred.right is None else env.data(pred.right)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"euclidean_within over {a.shape[1]}-d and {b.shape[1]}-d data")
    diff = a - b
    return np.einsum("ij,ij->i", diff, diff) <= pred.tau * pred.tau


def _evaluate(pred, env: _Binding) -> np.ndarray:
    if isinstance(pred, Compare):
        mask = _compare(pred, env)
    elif isinstance(pred, Contains):
        column = env.column(pred.ref)
        if column.tags and column.tags != {MetaTag.STRING_LIST}:
            raise TagMismatchError(f"'{pred.ref.key}' is not a string list")
        mask = np.fromiter(
            (bool(ok) and pred.value in values for values, ok in zip(column.values, column.present)),
            dtype=bool,
            count=column.present.shape[0],
        )
    elif isinstance(pred, BoxOverlap):
        mask = _box_overlap(pred, env)
    elif isinstance(pred, BoxContains):
        mask = _box_contains(pred, env)
    elif isinstance(pred, EuclideanWithin):
        mask = _euclidean(pred, env)
    elif isinstance(pred, And):
        mask = _evaluate(pred.terms[0], env)
        for term in pred.terms[1:]:
            mask = mask & _evaluate(term, env)
    elif isinstance(pred, Or):
        mask = _evaluate(pred.terms[0], env)
        for term in pred.terms[1:]:
            mask = mask | _evaluate(term, env)
    else:
        mask = ~_evaluate(pred.term, env)
    return np.broadcast_to(mask, (len(env.block),))


def evaluate_block(pred: Predicate, block: TupleBlock, outer: Optional[TupleBlock] = None) -> np.ndarray:
    """Boolean mask over ``block``; ``outer`` holds one tuple bound to the low positions."""
    if len(block) == 0:
        return np.zeros(0, dtype=bool)
    return _evaluate(pred, _Binding(block, outer))


def evaluate(pred: Predicate, tup: PatchTuple) -> bool:
    return bool(evaluate_block(pred, TupleBlock([tup]))[0])


# static checks

def _ref_tag(ref: Ref, schemas: Sequence[PatchSchema]) -> Tuple[Optional[MetaTag], Optional[str]]:
    if ref.pos >= len(schemas):
        return None, f"position {ref.pos} is out of range for {len(schemas)}-wide tuples"
    if ref.key in PSEUDO_KEYS:
        return PSEUDO_KEYS[ref.key], None
    tag = key_tag(schemas[ref.pos], ref.key)
    if tag is None:
        return None, f"key '{ref.key}' is not produced at position {ref.pos}"
    return tag, None


def check_predicate(pred: Predicate, schemas: Sequence[PatchSchema]) -> List[str]:
    """Type errors in ``pred`` against the schemas of the tuple positions."""
    problems: List[str] = []

    def need(ref: Ref, wanted: FrozenSet[MetaTag], what: str) -> Optional[MetaTag]:
        tag, problem = _ref_tag(ref, schemas)
        if problem:
            problems.append(problem)
        elif tag not in wanted:
            problems.append(f"'{ref.key}' ({tag.value}) is not {what}")
        return tag

    def walk(node) -> None:
        if isinstance(node, Compare):
            tag, problem = _ref_tag(node.left, schemas)
            if problem:
                problems.append(problem)
            elif node.right is None:
                if not literal_fits(tag, node.value, node.cmp):
                    problems.append(f"cannot compare '{node.left.key}' ({tag.value}) with {node.value!r}")
                elif node.left.key == "label" and node.cmp == "=":
                    schema = schemas[node.left.pos]
                    if not schema.admits_label(node.value):
                        problems.append(
                            f"label '{node.value}' is not producible (domain: {', '.join(schema.label_domain)})"
                        )
            else:
                other, problem = _ref_tag(node.right, schemas)
                if problem:
                    problems.append(problem)
                    return
                group = _tag_group(frozenset({tag}))
                if group == "other" or group != _tag_group(frozenset({other})):
                    problems.append(
                        f"cannot compare '{node.left.key}' ({tag.value}) with '{node.right.key}' ({other.value})"
                    )
        elif isinstance(node, Contains):
            need(node.ref, frozenset({MetaTag.STRING_LIST}), "a string list")
        elif isinstance(node, BoxOverlap):
            need(node.left, frozenset({MetaTag.BBOX}), "a bounding box")
            need(node.right, frozenset({MetaTag.BBOX}), "a bounding box")
        elif isinstance(node, BoxContains):
            need(node.outer, frozenset({MetaTag.BBOX}), "a bounding box")
            need(node.inner, frozenset({MetaTag.BBOX}), "a bounding box")
        elif isinstance(node, EuclideanWithin):
            positions = [node.left] + ([node.right] if node.right is not None else [])
            shapes = []
            for pos in positions:
                if pos >= len(schemas):
                    problems.append(f"position {pos} is out of range for {len(schemas)}-wide tuples")
                    return
                schema = schemas[pos]
                if schema.data_shape is not None and not schema.is_feature:
                    problems.append(f"euclidean_within needs feature data at position {pos}, found {schema.data_shape}")
                    return
                shapes.append(schema.data_shape)
            if node.vector is not None:
                shapes.append([len(node.vector)])
            known = {s[0] for s in shapes if s is not None and s[0] >= 0}
            if len(known) > 1:
                problems.append(f"euclidean_within over mismatched dimensions {sorted(known)}")
        elif isinstance(node, (And, Or)):
            for term in node.terms:
                walk(term)
        elif isinstance(node, Not):
            walk(node.term)

    walk(pred)
    return problems
