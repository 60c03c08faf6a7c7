"""
Typed metadata values and their canonical byte encoding.

Metadata maps string keys to tagged values. The tag is part of the value
and never changes once set; the reserved keys "label", "frameno" and
"bbox" always carry the string, integer and bounding-box tags.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Any, Dict, Iterable, Mapping, Tuple, Union


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Pixel box [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError(f"BoundingBox.{name} must be a non-negative integer, got {value!r}")
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise ValueError(f"Degenerate bounding box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def intersects(self, other: BoundingBox) -> bool:
        """Overlap on positive area."""
        return (
            self.x1 < other.x2 and other.x1 < self.x2
            and self.y1 < other.y2 and other.y1 < self.y2
        )

    def contains(self, other: BoundingBox) -> bool:
        return (
            self.x1 <= other.x1 and other.x2 <= self.x2
            and self.y1 <= other.y1 and other.y2 <= self.y2
        )

    def fits(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def iou(self, other: BoundingBox) -> float:
        ix = max(0, min(self.x2, other.x2) - max(self.x1, other.x1))
        iy = max(0, min(self.y2, other.y2) - max(self.y1, other.y1))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union else 0.0

    @classmethod
    def from_tuple(cls, values: Iterable[int]) -> BoundingBox:
        x1, y1, x2, y2 = (int(v) for v in values)
        return cls(x1, y1, x2, y2)


class MetaTag(str, Enum):
    INTEGER = "integer"
    FLOAT = "float"
    STRING = "string"
    BBOX = "bbox"
    STRING_LIST = "string_list"

    @property
    def code(self) -> int:
        return _TAG_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> MetaTag:
        try:
            return _CODE_TAGS[code]
        except KeyError:
            raise ValueError(f"Unknown metadata tag byte {code}") from None


_TAG_CODES = {
    MetaTag.INTEGER: 0,
    MetaTag.FLOAT: 1,
    MetaTag.STRING: 2,
    MetaTag.BBOX: 3,
    MetaTag.STRING_LIST: 4,
}
_CODE_TAGS = {code: tag for tag, code in _TAG_CODES.items()}

# Reserved keys and the tags they must carry
RESERVED_TAGS: Mapping[str, MetaTag] = MappingProxyType({
    "label": MetaTag.STRING,
    "frameno": MetaTag.INTEGER,
    "bbox": MetaTag.BBOX,
})

RawValue = Union[int, float, str, BoundingBox, Tuple[str, ...]]


@dataclass(frozen=True, slots=True)
class MetaValue:
    tag: MetaTag
    value: RawValue

    def __post_init__(self) -> None:
        value = self.value
        if self.tag is MetaTag.INTEGER:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif self.tag is MetaTag.FLOAT:
            ok = isinstance(value, float)
        elif self.tag is MetaTag.STRING:
            ok = isinstance(value, str)
        elif self.tag is MetaTag.BBOX:
            ok = isinstance(value, BoundingBox)
        else:
            ok = isinstance(value, tuple) and all(isinstance(v, str) for v in value)
        if not ok:
            raise ValueError(f"Value {value!r} does not match tag {self.tag.value}")

    @classmethod
    def of(cls, value: Any) -> MetaValue:
        """Wrap a plain Python value, inferring its tag."""
        if isinstance(value, MetaValue):
            return value
        if isinstance(value, bool):
            return cls(MetaTag.INTEGER, int(value))
        if isinstance(value, int):
            return cls(MetaTag.INTEGER, value)
        if isinstance(value, float):
            return cls(MetaTag.FLOAT, value)
        if isinstance(value, str):
            return cls(MetaTag.STRING, value)
        if isinstance(value, BoundingBox):
            return cls(MetaTag.BBOX, value)
        if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
            return cls(MetaTag.STRING_LIST, tuple(value))
        # numpy scalars
        if hasattr(value, "item"):
            return cls.of(value.item())
        raise TypeError(f"Unsupported metadata value {value!r}")


Metadata = Mapping[str, MetaValue]


def freeze_metadata(entries: Mapping[str, Any] | None) -> Metadata:
    """Build an immutable metadata map, wrapping plain values."""
    if not entries:
        return MappingProxyType({})
    return MappingProxyType({str(k): MetaValue.of(v) for k, v in entries.items()})


# Canonical encoding

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_BOX = struct.Struct(">IIII")


def _encode_str(value: str, width: struct.Struct) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) >= 1 << (8 * width.size):
        raise ValueError(f"String too long for encoding: {value[:32]!r}...")
    return width.pack(len(raw)) + raw


def encode_box(box: BoundingBox) -> bytes:
    return _BOX.pack(box.x1, box.y1, box.x2, box.y2)


def decode_box(buf: bytes | memoryview, offset: int) -> Tuple[BoundingBox, int]:
    return BoundingBox(*_BOX.unpack_from(buf, offset)), offset + _BOX.size


def encode_value(value: MetaValue) -> bytes:
    tag = value.tag
    out = _U8.pack(tag.code)
    if tag is MetaTag.INTEGER:
        return out + _I64.pack(value.value)
    if tag is MetaTag.FLOAT:
        return out + _F64.pack(value.value)
    if tag is MetaTag.STRING:
        return out + _encode_str(value.value, _U16)
    if tag is MetaTag.BBOX:
        return out + encode_box(value.value)
    items = value.value
    return out + _U16.pack(len(items)) + b"".join(_encode_str(s, _U16) for s in items)


def decode_value(buf: bytes | memoryview, offset: int) -> Tuple[MetaValue, int]:
    (code,) = _U8.unpack_from(buf, offset)
    offset += 1
    tag = MetaTag.from_code(code)
    if tag is MetaTag.INTEGER:
        (v,) = _I64.unpack_from(buf, offset)
        return MetaValue(tag, v), offset + 8
    if tag is MetaTag.FLOAT:
        (f,) = _F64.unpack_from(buf, offset)
        return MetaValue(tag, f), offset + 8
    if tag is MetaTag.STRING:
        s, offset = _decode_str(buf, offset, _U16)
        return MetaValue(tag, s), offset
    if tag is MetaTag.BBOX:
        box, offset = decode_box(buf, offset)
        return MetaValue(tag, box), offset
    (count,) = _U16.unpack_from(buf, offset)
    offset += 2
    items = []
    for _ in range(count):
        s, offset = _decode_str(buf, offset, _U16)
        items.append(s)
    return MetaValue(tag, tuple(items)), offset


def _decode_str(buf: bytes | memoryview, offset: int, width: struct.Struct) -> Tuple[str, int]:
    (length,) = width.unpack_from(buf, offset)
    offset += width.size
    return bytes(buf[offset:offset + length]).decode("utf-8"), offset + length


def encode_key(key: str) -> bytes:
    return _encode_str(key, _U8)


def decode_key(buf: bytes | memoryview, offset: int) -> Tuple[str, int]:
    return _decode_str(buf, offset, _U8)


def encode_metadata(metadata: Metadata) -> bytes:
    """Entries in ascending key order so equal maps encode identically."""
    keys = sorted(metadata)
    if len(keys) > 0xFFFF:
        raise ValueError("Too many metadata entries")
    parts = [_U16.pack(len(keys))]
    for key in keys:
        parts.append(encode_key(key))
        parts.append(encode_value(metadata[key]))
    return b"".join(parts)


def decode_metadata(buf: bytes | memoryview, offset: int) -> Tuple[Metadata, int]:
    (count,) = _U16.unpack_from(buf, offset)
    offset += 2
    entries: Dict[str, MetaValue] = {}
    for _ in range(count):
        key, offset = decode_key(buf, offset)
        entries[key], offset = decode_value(buf, offset)
    return MappingProxyType(entries), offset
