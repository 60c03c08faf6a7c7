"""Patch data model, lineage, schemas and the operator contract."""

from .hashing import combine, fnv1a64, params_digest
from .metadata import BoundingBox, Metadata, MetaTag, MetaValue, freeze_metadata
from .operator import Operator, OperatorStats, PatchTuple
from .patch import (
    CHANNELS,
    Frame,
    FrameKey,
    LineageRef,
    LineageStep,
    Patch,
    SourceKind,
    base_frames_of,
    derive_patch,
    make_patch,
)
from .schema import ANY_DIM, PatchSchema, check_schema
from .serialization import decode_patch, encode_patch

__all__ = [
    "ANY_DIM",
    "BoundingBox",
    "CHANNELS",
    "Frame",
    "FrameKey",
    "LineageRef",
    "LineageStep",
    "MetaTag",
    "MetaValue",
    "Metadata",
    "Operator",
    "OperatorStats",
    "Patch",
    "PatchSchema",
    "PatchTuple",
    "SourceKind",
    "base_frames_of",
    "check_schema",
    "combine",
    "decode_patch",
    "derive_patch",
    "encode_patch",
    "fnv1a64",
    "freeze_metadata",
    "make_patch",
    "params_digest",
]
