"""Exception hierarchy for the patch engine."""

from typing import List, Sequence


class PatchEngineError(Exception):
    """Base class for every engine error."""


# core

class RegionOutOfBoundsError(PatchEngineError):
    """A crop region exceeds the frame it is taken from."""


class MalformedLineageError(PatchEngineError):
    """A lineage chain is empty or does not end at a base frame."""


class InvalidPatchError(PatchEngineError):
    """A patch violates a structural invariant (shape, reserved key tags)."""


class TagMismatchError(PatchEngineError):
    """A metadata value has a different tag than the operation expects."""


# storage

class OutOfOrderFrameError(PatchEngineError):
    """Frames did not arrive as 0, 1, 2, ... during ingest."""


class FrameShapeError(PatchEngineError):
    """A frame's dimensions differ from the rest of the video."""


class MissingFrameError(PatchEngineError):
    """A requested frame number is not stored."""


# index

class MissingKeyError(PatchEngineError):
    """A patch lacks the key (or the key's expected tag) an index is built on."""

    def __init__(self, key: str, patch_id: int):
        self.key = key
        self.patch_id = patch_id
        super().__init__(f"Patch {patch_id:#018x} has no usable '{key}' value")


class EmptyInputError(PatchEngineError):
    """An index build received no entries."""


class MixedDimensionError(PatchEngineError):
    """Points passed to a metric index do not share one dimensionality."""


class DimensionMismatchError(PatchEngineError):
    """A query vector's dimension differs from the index's."""


class KTooLargeError(PatchEngineError):
    """k-NN asked for more neighbours than there are points."""


# etl

class ShapeError(PatchEngineError):
    """Patch data does not have the shape a stage requires."""


class DuplicatePatchError(PatchEngineError):
    """Two patches with the same id were materialized into one collection."""


# query

class MissingBaseFrameError(PatchEngineError):
    """Backtracing could not find the base frame a patch descends from."""


class PlanValidationError(PatchEngineError):
    """A pipeline or plan failed validation; carries every violation found."""

    def __init__(self, violations: Sequence[str]):
        self.violations: List[str] = list(violations)
        super().__init__("; ".join(self.violations))


# bench / cli

class EntityTooLargeError(PatchEngineError):
    """A scene entity does not fit in the frame (or in its lane)."""


class ConfigurationError(PatchEngineError):
    """A configuration or plan document is inconsistent."""
