"""
Static pipeline validation.

Each stage declares the schema it needs and the schema it produces; the
validator threads the output schema of one stage into the next and
collects every violation it finds.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import structlog

from ..core.metadata import MetaTag
from ..core.schema import PatchSchema
from ..errors import PlanValidationError
from ..index.keyed import BOX_COORDS, HASH_TAGS, ORDERED_TAGS
from .specs import (
    DedupSpec,
    FilterSpec,
    GeneratorSpec,
    IndexSpec,
    SimilarityJoinSpec,
    StageSpec,
    TransformerKind,
    TransformerSpec,
)

logger = structlog.get_logger(__name__)


def _shape(schema: PatchSchema) -> str:
    return "any shape" if schema.data_shape is None else str(schema.data_shape)


def key_tag(schema: PatchSchema, key: str) -> Optional[MetaTag]:
    """Tag a stream with ``schema`` guarantees for ``key``, or None."""
    if key.startswith("bbox."):
        coord = key.split(".", 1)[1]
        if coord in BOX_COORDS and schema.required_keys.get("bbox") is MetaTag.BBOX:
            return MetaTag.INTEGER
        return None
    return schema.required_keys.get(key)


def literal_fits(tag: MetaTag, value: object, op: str) -> bool:
    """Whether comparing a ``tag`` value with ``value`` under ``op`` is well typed."""
    if op == "contains":
        return tag is MetaTag.STRING_LIST and isinstance(value, str)
    if tag is MetaTag.STRING:
        return isinstance(value, str)
    if tag in (MetaTag.INTEGER, MetaTag.FLOAT):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return False


def _check_feature(schema: PatchSchema, dim: Optional[int]) -> Optional[str]:
    if not schema.is_feature:
        return f"needs feature vectors, upstream produces {_shape(schema)}"
    if dim is not None and schema.data_shape[0] != dim:
        return f"shape mismatch: expects [{dim}], upstream produces {_shape(schema)}"
    return None


def _transformer(spec: TransformerSpec, schema: PatchSchema) -> Tuple[List[str], PatchSchema]:
    problems = []
    if schema.data_shape is not None and not schema.is_pixels:
        problems.append(f"needs pixel data [h, w, 3], upstream produces {_shape(schema)}")
    if spec.kind is TransformerKind.DEPTH_PROXY:
        if schema.required_keys.get("bbox") is not MetaTag.BBOX:
            problems.append("needs key 'bbox' (bbox), upstream does not produce it")
        if spec.frame_height is None and schema.required_keys.get("frame_height") is not MetaTag.INTEGER:
            problems.append("needs 'frame_height' from upstream or in its parameters")
    return problems, spec.schema(schema)


def _filter(spec: FilterSpec, schema: PatchSchema) -> Tuple[List[str], PatchSchema]:
    problems = []
    tag = key_tag(schema, spec.key)
    if tag is None:
        problems.append(f"key '{spec.key}' is not produced by upstream")
    elif not literal_fits(tag, spec.value, spec.op):
        problems.append(f"cannot compare '{spec.key}' ({tag.value}) with {spec.value!r} using '{spec.op}'")
    if spec.key == "label" and spec.op == "=" and isinstance(spec.value, str):
        if not schema.admits_label(spec.value):
            problems.append(
                f"label '{spec.value}' is not producible by the pipeline (domain: {', '.join(schema.label_domain)})"
            )
        elif schema.label_domain is not None:
            schema = schema.model_copy(update={"label_domain": [spec.value]})
    return problems, schema


def _index(spec: IndexSpec, schema: PatchSchema) -> List[str]:
    if spec.kind == "balltree":
        problem = _check_feature(schema, spec.dim)
        return [problem] if problem else []
    key = spec.key or ("bbox" if spec.kind == "rtree" else None)
    if key is None:
        return [f"{spec.kind} index needs a key"]
    tag = key_tag(schema, key)
    wanted = {"hash": HASH_TAGS, "ordered": ORDERED_TAGS, "rtree": (MetaTag.BBOX,)}[spec.kind]
    if tag is None:
        return [f"key '{key}' is not produced by upstream"]
    if tag not in wanted:
        return [f"{spec.kind} index cannot key on '{key}' ({tag.value})"]
    return []


def _dedup(spec: DedupSpec, schema: PatchSchema) -> Tuple[List[str], PatchSchema]:
    problems = []
    problem = _check_feature(schema, spec.dim)
    if problem:
        problems.append(problem)
    if spec.collect is not None:
        if key_tag(schema, spec.collect) is None:
            problems.append(f"key '{spec.collect}' is not produced by upstream")
        schema = schema.derive(keep_shape=True, **{f"group_{spec.collect}": MetaTag.STRING_LIST})
    return problems, schema


def validate_pipeline(stages: Sequence[StageSpec]) -> List[str]:
    """
    Every violation in ``stages``; an empty list means the pipeline is valid.

    Messages name the offending stage as ``stage <i> (<name>)``.
    """
    if not stages:
        return ["pipeline is empty; it must begin with a generator"]

    violations: List[str] = []
    schema = PatchSchema()
    for position, stage in enumerate(stages):
        problems: List[str] = []
        if isinstance(stage, GeneratorSpec):
            if position != 0:
                problems.append("a generator can only be the first stage")
            schema = stage.schema()
        elif position == 0:
            problems.append("pipeline must begin with a generator")
        elif isinstance(stage, TransformerSpec):
            problems, schema = _transformer(stage, schema)
        elif isinstance(stage, FilterSpec):
            problems, schema = _filter(stage, schema)
        elif isinstance(stage, SimilarityJoinSpec):
            problem = _check_feature(schema, stage.dim)
            problems = [problem] if problem else []
        elif isinstance(stage, IndexSpec):
            problems = _index(stage, schema)
        elif isinstance(stage, DedupSpec):
            problems, schema = _dedup(stage, schema)
        violations.extend(f"stage {position} ({stage.name}): {problem}" for problem in problems)

    if violations:
        logger.debug("Pipeline failed validation", stages=len(stages), violations=len(violations))
    return violations


def check_pipeline(stages: Sequence[StageSpec]) -> PatchSchema:
    """Validate ``stages`` and return the output schema of the last one; raises PlanValidationError."""
    violations = validate_pipeline(stages)
    if violations:
        raise PlanValidationError(violations)
    return output_schema(stages)


def output_schema(stages: Sequence[StageSpec]) -> PatchSchema:
    schema = PatchSchema()
    for stage in stages:
        if isinstance(stage, GeneratorSpec):
            schema = stage.schema()
        elif isinstance(stage, TransformerSpec):
            schema = stage.schema(schema)
        elif isinstance(stage, FilterSpec):
            schema = _filter(stage, schema)[1]
        elif isinstance(stage, DedupSpec):
            schema = _dedup(stage, schema)[1]
    return schema
