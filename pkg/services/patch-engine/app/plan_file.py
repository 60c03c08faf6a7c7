"""
Plan files: one JSON document naming the input stores, the pipelines that
turn them into patch collections, the indexes to build and the query plan
to run, with the physical design spelled out.

    {
      "pipelines": [{"store": "data/traffic.db", "output": "data/blobs.patches",
                     "stages": [{"stage": "generator", "kind": "blob_detector", "palette": [...]},
                                {"stage": "index", "kind": "hash", "key": "label"}]}],
      "indexes": [{"collection": "data/blobs.patches", "kind": "ordered", "key": "frameno"}],
      "plan": {"node": "count_by", "key": "frameno",
               "child": {"node": "index_scan", "collection": "data/blobs.patches",
                         "index": "label_hash", "value": "vehicle"}},
      "output": {"results": "out/results.csv", "stats": "out/stats.txt"}
    }
"""

from __future__ import annotations

import csv
import json
import os
from typing import Annotated, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field

from shared.config.settings import BaseConfig

from .core.metadata import BoundingBox, MetaTag
from .core.operator import PatchTuple
from .core.patch import Patch
from .errors import ConfigurationError, PlanValidationError
from .etl.collection import PatchCollection, materialize, open_collection
from .etl.generators import generate
from .etl.specs import (
    DedupSpec,
    FilterSpec,
    GeneratorSpec,
    IndexSpec,
    SimilarityJoinSpec,
    TransformerSpec,
)
from .etl.transformers import transform
from .etl.validation import output_schema, validate_pipeline
from .index.balltree import build_balltree
from .index.keyed import build_hash, build_ordered
from .index.persist import AnyIndex, save_index
from .index.rtree import build_rtree
from .index.sources import box_entries, feature_points
from .query.operators import Dedup, IndexKindName, PatchSource
from .query.plan import PlanNode
from .query.predicates import Compare, Contains, Predicate, Ref, evaluate
from .storage.video_store import open_store

logger = structlog.get_logger(__name__)

Stage = Annotated[
    Union[GeneratorSpec, TransformerSpec, FilterSpec, SimilarityJoinSpec, IndexSpec, DedupSpec],
    Field(discriminator="stage"),
]


class PipelineSection(BaseModel):
    """Frames of ``store`` through ``stages`` into the collection at ``output``."""

    model_config = ConfigDict(extra="forbid")

    store: str
    output: str
    name: Optional[str] = None
    frame_range: Optional[Tuple[int, int]] = None
    stages: List[Stage] = Field(min_length=1)


class IndexBuild(BaseModel):
    model_config = ConfigDict(extra="forbid")

    collection: str
    kind: IndexKindName
    key: Optional[str] = None
    name: Optional[str] = None

    @property
    def index_name(self) -> str:
        return self.name or index_name(self.kind, self.key)


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    results: Optional[str] = None
    stats: Optional[str] = None
    stats_csv: Optional[str] = None


class PlanFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pipelines: List[PipelineSection] = []
    indexes: List[IndexBuild] = []
    plan: Optional[PlanNode] = None
    output: OutputSection = OutputSection()

    def pipeline_violations(self) -> List[str]:
        violations = []
        for number, section in enumerate(self.pipelines):
            violations.extend(f"pipelines[{number}] {msg}" for msg in validate_pipeline(section.stages))
        return violations


def load_plan_file(path: str) -> PlanFile:
    """Parse a plan file; raises ConfigurationError on malformed JSON, ValidationError on bad content."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path} is not valid JSON: {e}") from e
    return PlanFile.model_validate(raw)


def index_name(kind: Union[IndexKindName, str], key: Optional[str]) -> str:
    kind = IndexKindName(kind).value
    return f"{key}_{kind}" if key else kind


def build_index(
    collection: PatchCollection,
    kind: Union[IndexKindName, str],
    key: Optional[str],
    engine: BaseConfig,
) -> AnyIndex:
    kind = IndexKindName(kind)
    if kind in (IndexKindName.HASH, IndexKindName.ORDERED) and not key:
        raise ConfigurationError(f"a {kind.value} index needs a key")
    patches = collection.scan()
    if kind is IndexKindName.HASH:
        return build_hash(patches, key)
    if kind is IndexKindName.ORDERED:
        return build_ordered(patches, key)
    if kind is IndexKindName.RTREE:
        return build_rtree(box_entries(patches, key or "bbox"), engine.rtree_capacity, engine.rtree_min_fill)
    return build_balltree(feature_points(patches), engine.leaf_size)


def _predicate(spec: FilterSpec) -> Predicate:
    if spec.op == "contains":
        return Contains(ref=Ref(key=spec.key), value=str(spec.value))
    return Compare(left=Ref(key=spec.key), cmp=spec.op, value=spec.value)


def _filtered(patches: Iterable[Patch], spec: FilterSpec) -> Iterator[Patch]:
    predicate = _predicate(spec)
    return (patch for patch in patches if evaluate(predicate, (patch,)))


def run_section(section: PipelineSection, engine: BaseConfig) -> PatchCollection:
    """
    Run one pipeline. Generators, transformers, filters and dedup stages
    produce the materialized patches; index stages are built over the
    result; similarity-join stages only declare what a later plan needs.
    """
    violations = validate_pipeline(section.stages)
    if violations:
        raise PlanValidationError(violations)
    store = open_store(section.store)
    stream: Iterable[Patch] = store.scan(section.frame_range)
    for stage in section.stages:
        if isinstance(stage, GeneratorSpec):
            stream = generate(stream, stage)
        elif isinstance(stage, TransformerSpec):
            stream = transform(stream, stage)
        elif isinstance(stage, FilterSpec):
            stream = _filtered(stream, stage)
        elif isinstance(stage, DedupSpec):
            deduped = Dedup(PatchSource(stream), engine.dedup_tau, collect=stage.collect, leaf_size=engine.leaf_size)
            stream = (tup[0] for tup in deduped)
    name = section.name or " -> ".join(stage.name for stage in section.stages)
    collection = materialize(stream, section.output, schema=output_schema(section.stages), name=name)
    for stage in section.stages:
        if isinstance(stage, IndexSpec):
            key = stage.key or ("bbox" if stage.kind == "rtree" else None)
            save_index(collection, index_name(stage.kind, stage.key), build_index(collection, stage.kind, key, engine))
    return collection


def run_pipelines(plan_file: PlanFile, engine: BaseConfig) -> List[PatchCollection]:
    """Validate every pipeline first, then run them in order, then build the listed indexes."""
    violations = plan_file.pipeline_violations()
    if violations:
        raise PlanValidationError(violations)
    collections = [run_section(section, engine) for section in plan_file.pipelines]
    for build in plan_file.indexes:
        collection = open_collection(build.collection)
        save_index(collection, build.index_name, build_index(collection, build.kind, build.key, engine))
    return collections


RESULT_COLUMNS = ("row", "pos", "patch_id", "video_id", "frameno", "x1", "y1", "x2", "y2", "metadata")


def _plain(value) -> object:
    if isinstance(value, BoundingBox):
        return list(value.as_tuple())
    if isinstance(value, tuple):
        return list(value)
    return value


def result_rows(rows: Sequence[PatchTuple]) -> Iterator[dict]:
    for number, tup in enumerate(rows):
        for pos, patch in enumerate(tup):
            box = patch.bbox
            extra = {
                key: _plain(value.value)
                for key, value in sorted(patch.metadata.items())
                if key not in ("frameno", "bbox") and value.tag is not MetaTag.BBOX
            }
            yield {
                "row": number,
                "pos": pos,
                "patch_id": f"{patch.patch_id:016x}",
                "video_id": patch.video_id,
                "frameno": patch.frameno,
                "x1": box.x1 if box else "",
                "y1": box.y1 if box else "",
                "x2": box.x2 if box else "",
                "y2": box.y2 if box else "",
                "metadata": json.dumps(extra, sort_keys=True),
            }


def write_results(rows: Sequence[PatchTuple], path: str) -> int:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(result_rows(rows))
    logger.debug("Wrote results", path=path, tuples=len(rows))
    return len(rows)
