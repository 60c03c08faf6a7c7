"""
Patch data model: frames, lineage and the patch record itself.

A patch is a sub-image (or a feature vector computed from one) together
with typed metadata and the chain of steps that produced it from a base
frame. All types here are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import InvalidPatchError, MalformedLineageError, RegionOutOfBoundsError
from .hashing import combine
from .metadata import RESERVED_TAGS, BoundingBox, Metadata, MetaTag, freeze_metadata

CHANNELS = 3

FrameKey = Tuple[str, int]


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Frame:
    """A decoded RGB frame; ``pixels`` has shape (height, width, 3), dtype uint8."""

    video_id: str
    frame_no: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.frame_no < 0:
            raise ValueError(f"frame_no must be non-negative, got {self.frame_no}")
        pixels = np.asarray(self.pixels)
        if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != CHANNELS:
            raise ValueError(f"Frame pixels must be uint8 (h, w, 3), got {pixels.dtype} {pixels.shape}")
        if pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise ValueError("Frame must have positive width and height")
        if pixels.flags.writeable:
            pixels = _readonly(pixels.copy())
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def channels(self) -> int:
        return CHANNELS

    @property
    def key(self) -> FrameKey:
        return (self.video_id, self.frame_no)

    def to_bytes(self) -> bytes:
        return self.pixels.tobytes()

    @classmethod
    def from_bytes(cls, video_id: str, frame_no: int, width: int, height: int, data: bytes) -> Frame:
        if len(data) != width * height * CHANNELS:
            raise ValueError(
                f"Pixel buffer of {len(data)} bytes does not match {width}x{height}x{CHANNELS}"
            )
        pixels = np.frombuffer(data, dtype=np.uint8).reshape(height, width, CHANNELS)
        return cls(video_id, frame_no, pixels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.key == other.key and np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        return hash(self.key)


class SourceKind(IntEnum):
    BASE_FRAME = 0
    PATCH = 1


@dataclass(frozen=True, slots=True)
class LineageStep:
    op_name: str
    source_kind: SourceKind
    source_id: Union[FrameKey, int]
    region: Optional[BoundingBox] = None
    params_digest: int = 0

    @property
    def is_base(self) -> bool:
        return self.source_kind is SourceKind.BASE_FRAME


@dataclass(frozen=True, slots=True)
class LineageRef:
    """Derivation chain, most recent step first."""

    chain: Tuple[LineageStep, ...]

    def validate(self) -> None:
        if not self.chain:
            raise MalformedLineageError("Lineage chain is empty")
        if not self.chain[-1].is_base:
            raise MalformedLineageError("Lineage chain does not terminate in a base frame")
        for step in self.chain[:-1]:
            if step.is_base:
                raise MalformedLineageError("Base-frame step found before the end of the chain")

    @property
    def depth(self) -> int:
        return len(self.chain)

    @property
    def base(self) -> LineageStep:
        self.validate()
        return self.chain[-1]

    def extend(self, step: LineageStep) -> LineageRef:
        return LineageRef((step,) + self.chain)


@dataclass(frozen=True, eq=False)
class Patch:
    """
    The engine's unit record.

    ``data`` is a flat float32 vector and ``shape`` its logical dimensions:
    [h, w, 3] for pixel content, [d] for features. Lineage is checked by
    the operations that rely on it (``base_frames_of``, serialization) so
    that a malformed chain can still be represented and reported.
    """

    patch_id: int
    lineage: LineageRef
    data: np.ndarray
    shape: Tuple[int, ...]
    metadata: Metadata = field(default_factory=lambda: freeze_metadata(None))

    def __post_init__(self) -> None:
        shape = tuple(int(d) for d in self.shape)
        if any(d < 0 for d in shape):
            raise InvalidPatchError(f"Negative dimension in shape {shape}")
        data = np.asarray(self.data, dtype=np.float32).reshape(-1)
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise InvalidPatchError(
                f"Shape {shape} describes {int(np.prod(shape))} values but data has {data.size}"
            )
        if data.flags.writeable:
            data = _readonly(data.copy())
        metadata = freeze_metadata(self.metadata)
        for key, tag in RESERVED_TAGS.items():
            value = metadata.get(key)
            if value is not None and value.tag is not tag:
                raise InvalidPatchError(f"Reserved key '{key}' must be {tag.value}, got {value.tag.value}")
        object.__setattr__(self, "patch_id", int(self.patch_id))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "metadata", metadata)

    @property
    def array(self) -> np.ndarray:
        """Data viewed with its logical shape."""
        return self.data.reshape(self.shape)

    @property
    def is_pixels(self) -> bool:
        return len(self.shape) == 3 and self.shape[2] == CHANNELS

    @property
    def is_feature(self) -> bool:
        return len(self.shape) == 1

    def features(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def get(self, key: str, default: Any = None) -> Any:
        """Raw metadata value for ``key``."""
        value = self.metadata.get(key)
        return default if value is None else value.value

    def tag_of(self, key: str) -> Optional[MetaTag]:
        value = self.metadata.get(key)
        return None if value is None else value.tag

    @property
    def label(self) -> Optional[str]:
        return self.get("label")

    @property
    def frameno(self) -> Optional[int]:
        return self.get("frameno")

    @property
    def bbox(self) -> Optional[BoundingBox]:
        return self.get("bbox")

    @property
    def video_id(self) -> str:
        source = self.lineage.base.source_id
        return source[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Patch):
            return NotImplemented
        return (
            self.patch_id == other.patch_id
            and self.shape == other.shape
            and self.lineage == other.lineage
            and dict(self.metadata) == dict(other.metadata)
            and np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash(self.patch_id)

    def __repr__(self) -> str:
        return f"Patch(id={self.patch_id:#018x}, shape={list(self.shape)}, keys={sorted(self.metadata)})"


def make_patch(
    frame: Frame,
    region: BoundingBox,
    metadata: Optional[Mapping[str, Any]] = None,
    op_name: str = "crop",
    params_digest: int = 0,
) -> Patch:
    """Crop ``region`` out of ``frame`` into a depth-1 patch."""
    if not region.fits(frame.width, frame.height):
        raise RegionOutOfBoundsError(
            f"Region {region.as_tuple()} exceeds frame {frame.width}x{frame.height}"
        )
    crop = frame.pixels[region.y1:region.y2, region.x1:region.x2, :]
    entries = dict(metadata or {})
    entries["frameno"] = frame.frame_no
    entries["bbox"] = region
    step = LineageStep(op_name, SourceKind.BASE_FRAME, frame.key, region, params_digest)
    patch_id = combine(op_name, frame.video_id, frame.frame_no, *region.as_tuple(), params_digest)
    return Patch(
        patch_id=patch_id,
        lineage=LineageRef((step,)),
        data=crop.astype(np.float32).reshape(-1),
        shape=crop.shape,
        metadata=freeze_metadata(entries),
    )


def derive_patch(
    parent: Patch,
    op_name: str,
    new_data: Optional[np.ndarray] = None,
    new_metadata_entries: Optional[Mapping[str, Any]] = None,
    params_digest: int = 0,
    shape: Optional[Sequence[int]] = None,
) -> Patch:
    """
    Derive a patch from ``parent``.

    ``new_data`` keeps its own shape unless ``shape`` is given; passing
    None keeps the parent's data. New metadata entries win on collision.
    """
    if new_data is None:
        data, new_shape = parent.data, parent.shape
    else:
        array = np.asarray(new_data, dtype=np.float32)
        new_shape = tuple(shape) if shape is not None else array.shape
        data = array.reshape(-1)
    merged = dict(parent.metadata)
    merged.update(freeze_metadata(new_metadata_entries))
    step = LineageStep(op_name, SourceKind.PATCH, parent.patch_id, None, params_digest)
    return Patch(
        patch_id=combine(parent.patch_id, op_name, params_digest),
        lineage=parent.lineage.extend(step),
        data=data,
        shape=new_shape,
        metadata=freeze_metadata(merged),
    )


def base_frames_of(patch: Patch) -> List[FrameKey]:
    """(video_id, frame_no) of every base-frame step, in chain order."""
    patch.lineage.validate()
    return [step.source_id for step in patch.lineage.chain if step.is_base]
