"""Patch generators, transformers, materialization and pipeline validation."""

from .collection import PatchCollection, materialize, open_collection
from .generators import generate
from .glyphs import GLYPH_H, GLYPH_W, decode_glyph, encode_glyph, find_glyph
from .pipeline import build_collection, run_pipeline
from .specs import (
    DedupSpec,
    FilterSpec,
    GeneratorKind,
    GeneratorSpec,
    IndexSpec,
    PaletteEntry,
    SimilarityJoinSpec,
    StageSpec,
    TransformerKind,
    TransformerSpec,
)
from .transformers import color_histogram, depth_of, transform
from .validation import check_pipeline, output_schema, validate_pipeline

__all__ = [
    "GLYPH_H",
    "GLYPH_W",
    "DedupSpec",
    "FilterSpec",
    "GeneratorKind",
    "GeneratorSpec",
    "IndexSpec",
    "PaletteEntry",
    "PatchCollection",
    "SimilarityJoinSpec",
    "StageSpec",
    "TransformerKind",
    "TransformerSpec",
    "build_collection",
    "check_pipeline",
    "color_histogram",
    "decode_glyph",
    "depth_of",
    "encode_glyph",
    "find_glyph",
    "generate",
    "materialize",
    "open_collection",
    "output_schema",
    "run_pipeline",
    "transform",
    "validate_pipeline",
]
