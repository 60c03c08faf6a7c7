"""
Declarative stage specs for patch pipelines.

Generators turn frames into patches, transformers turn patches into
derived patches, and the operator specs describe what a downstream query
stage needs from its input so a pipeline can be type-checked before it
runs.
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.hashing import params_digest
from ..core.metadata import MetaTag
from ..core.schema import PatchSchema

DEFAULT_BINS = 8
DEFAULT_TOLERANCE = 24
DEFAULT_MIN_AREA = 100


class GeneratorKind(str, Enum):
    WHOLE_IMAGE = "whole_image"
    TILES = "tiles"
    BLOB_DETECTOR = "blob_detector"
    GLYPH_READER = "glyph_reader"


class TransformerKind(str, Enum):
    COLOR_HISTOGRAM = "color_histogram"
    DEPTH_PROXY = "depth_proxy"


class PaletteEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    r: int = Field(ge=0, le=255)
    g: int = Field(ge=0, le=255)
    b: int = Field(ge=0, le=255)
    label: str = Field(min_length=1)

    @property
    def rgb(self) -> tuple:
        return (self.r, self.g, self.b)


class GeneratorSpec(BaseModel):
    """A patch generator; only the parameters of ``kind`` are used."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["generator"] = "generator"
    kind: GeneratorKind
    tile_w: Optional[int] = Field(default=None, ge=1)
    tile_h: Optional[int] = Field(default=None, ge=1)
    palette: List[PaletteEntry] = []
    min_area: int = Field(default=DEFAULT_MIN_AREA, ge=1)
    label_noise_p: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = 0
    color_tolerance: int = Field(default=DEFAULT_TOLERANCE, ge=0, le=255)
    output_schema: Optional[PatchSchema] = None

    @model_validator(mode="after")
    def _check_kind_params(self) -> GeneratorSpec:
        if self.kind is GeneratorKind.BLOB_DETECTOR and not self.palette:
            raise ValueError("blob_detector needs a non-empty palette")
        if self.kind is GeneratorKind.TILES and (self.tile_w is None or self.tile_h is None):
            raise ValueError("tiles needs tile_w and tile_h")
        return self

    @property
    def name(self) -> str:
        return self.kind.value

    def labels(self) -> List[str]:
        return sorted({entry.label for entry in self.palette})

    def params(self) -> Dict[str, Any]:
        if self.kind is GeneratorKind.TILES:
            return {"tile_w": self.tile_w, "tile_h": self.tile_h}
        if self.kind is GeneratorKind.BLOB_DETECTOR:
            return {
                "palette": [f"{e.r},{e.g},{e.b}:{e.label}" for e in self.palette],
                "min_area": self.min_area,
                "label_noise_p": float(self.label_noise_p),
                "seed": self.seed,
                "color_tolerance": self.color_tolerance,
            }
        return {}

    def digest(self) -> int:
        return params_digest(self.kind.value, self.params())

    def schema(self) -> PatchSchema:
        if self.output_schema is not None:
            return self.output_schema
        if self.kind is GeneratorKind.BLOB_DETECTOR:
            return PatchSchema.pixels(label_domain=self.labels(), frame_height=MetaTag.INTEGER)
        if self.kind is GeneratorKind.GLYPH_READER:
            return PatchSchema.pixels(text=MetaTag.STRING, frame_height=MetaTag.INTEGER)
        if self.kind is GeneratorKind.TILES:
            schema = PatchSchema.pixels(frame_height=MetaTag.INTEGER)
            return schema.model_copy(update={"data_shape": [self.tile_h, self.tile_w, 3]})
        return PatchSchema.pixels(frame_height=MetaTag.INTEGER)


class TransformerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["transformer"] = "transformer"
    kind: TransformerKind
    bins_per_channel: int = Field(default=DEFAULT_BINS, ge=2, le=256)
    frame_height: Optional[int] = Field(default=None, ge=1)
    output_schema: Optional[PatchSchema] = None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def dims(self) -> int:
        return 3 * self.bins_per_channel

    def params(self) -> Dict[str, Any]:
        if self.kind is TransformerKind.COLOR_HISTOGRAM:
            return {"bins_per_channel": self.bins_per_channel}
        return {} if self.frame_height is None else {"frame_height": self.frame_height}

    def digest(self) -> int:
        return params_digest(self.kind.value, self.params())

    def schema(self, upstream: PatchSchema) -> PatchSchema:
        if self.output_schema is not None:
            return self.output_schema
        if self.kind is TransformerKind.COLOR_HISTOGRAM:
            return upstream.derive(data_shape=[self.dims], hist_dims=MetaTag.INTEGER)
        return upstream.derive(keep_shape=True, depth=MetaTag.FLOAT)


class FilterSpec(BaseModel):
    """A selection on one metadata key compared with a literal."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["filter"] = "filter"
    key: str
    value: Union[int, float, str]
    op: Literal["=", "!=", "<", "<=", ">", ">=", "contains"] = "="

    @property
    def name(self) -> str:
        return f"filter {self.key}{self.op}{self.value!r}"


class SimilarityJoinSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["similarity_join"] = "similarity_join"
    dim: int = Field(ge=1)

    @property
    def name(self) -> str:
        return f"similarity_join d={self.dim}"


class IndexSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["index"] = "index"
    kind: Literal["hash", "ordered", "rtree", "balltree"]
    key: Optional[str] = None
    dim: Optional[int] = Field(default=None, ge=1)

    @property
    def name(self) -> str:
        return f"{self.kind} index" + (f" on {self.key}" if self.key else "")


class DedupSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["dedup"] = "dedup"
    dim: Optional[int] = Field(default=None, ge=1)
    collect: Optional[str] = None

    @property
    def name(self) -> str:
        return "dedup"


StageSpec = Union[GeneratorSpec, TransformerSpec, FilterSpec, SimilarityJoinSpec, IndexSpec, DedupSpec]
