"""
Index serialization.

Every index is one value: 4-byte magic ``PIDX``, 1-byte kind, then the
kind's layout (integers big-endian, arrays as big-endian numpy buffers):

    hash      u8-length key, u8 tag (0xFF none), u32 groups,
              per group in key order: tagged value, u32 n, n x u64 ids
    ordered   u8-length key, u32 groups, per group: tagged value, u32 n, ids
    rtree     u16 capacity, u16 min entries, u32 nodes, u32 entries,
              leaf flags u8, first i64, count i64, rects 4 x f64, refs u64
    balltree  u32 n, u32 d, u32 leaf size, u32 nodes, ids u64,
              points f64, start/end/left/right i64, centroids f64, radii f64

Persisted indexes live in the ``indexes`` table of a collection's store,
keyed by index name.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import List, Protocol, Tuple, Union

import numpy as np
import structlog

from shared.store.record_store import RecordStore, RecordStoreError

from ..core.metadata import MetaTag, MetaValue, decode_key, decode_value, encode_key, encode_value
from .balltree import BallTreeIndex
from .keyed import HashIndex, OrderedIndex
from .rtree import RTreeIndex

logger = structlog.get_logger(__name__)

MAGIC = b"PIDX"
INDEX_TABLE = "indexes"

AnyIndex = Union[HashIndex, OrderedIndex, RTreeIndex, BallTreeIndex]

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_RTREE_HEAD = struct.Struct(">HHII")
_BALL_HEAD = struct.Struct(">IIII")
_NO_TAG = 0xFF


class IndexKind(IntEnum):
    HASH = 1
    ORDERED = 2
    RTREE = 3
    BALLTREE = 4


class HasRecordStore(Protocol):
    store: RecordStore


def kind_of(idx: AnyIndex) -> IndexKind:
    if isinstance(idx, HashIndex):
        return IndexKind.HASH
    if isinstance(idx, OrderedIndex):
        return IndexKind.ORDERED
    if isinstance(idx, RTreeIndex):
        return IndexKind.RTREE
    if isinstance(idx, BallTreeIndex):
        return IndexKind.BALLTREE
    raise TypeError(f"Not an index: {type(idx).__name__}")


def _ids(ids) -> bytes:
    return _U32.pack(len(ids)) + np.asarray(ids, dtype=">u8").tobytes()


def _array(values: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(values).astype(dtype).tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.buf = memoryview(blob)
        self.offset = 0

    def unpack(self, fmt: struct.Struct) -> Tuple:
        values = fmt.unpack_from(self.buf, self.offset)
        self.offset += fmt.size
        return values

    def array(self, dtype: str, count: int, native: str) -> np.ndarray:
        out = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.offset).astype(native)
        self.offset += out.itemsize * count
        return out

    def ids(self) -> Tuple[int, ...]:
        (n,) = self.unpack(_U32)
        return tuple(int(v) for v in self.array(">u8", n, "uint64"))

    def key(self) -> str:
        name, self.offset = decode_key(self.buf, self.offset)
        return name

    def value(self) -> MetaValue:
        value, self.offset = decode_value(self.buf, self.offset)
        return value


def serialize_index(idx: AnyIndex) -> bytes:
    kind = kind_of(idx)
    parts: List[bytes] = [MAGIC, _U8.pack(int(kind))]
    if kind is IndexKind.HASH:
        parts.append(encode_key(idx.key))
        parts.append(_U8.pack(_NO_TAG if idx.tag is None else idx.tag.code))
        parts.append(_U32.pack(len(idx.table)))
        for value in sorted(idx.table):
            parts.append(encode_value(MetaValue(idx.tag, value)))
            parts.append(_ids(idx.table[value]))
    elif kind is IndexKind.ORDERED:
        parts.append(encode_key(idx.key))
        parts.append(_U32.pack(len(idx.keys)))
        for value, ids in zip(idx.keys, idx.postings):
            parts.append(encode_value(MetaValue.of(value)))
            parts.append(_ids(ids))
    elif kind is IndexKind.RTREE:
        parts.append(_RTREE_HEAD.pack(idx.capacity, idx.min_entries, idx.nodes, idx.entry_refs.shape[0]))
        parts.append(_array(idx.node_leaf, "u1"))
        parts.append(_array(idx.node_first, ">i8"))
        parts.append(_array(idx.node_count, ">i8"))
        parts.append(_array(idx.entry_rects, ">f8"))
        parts.append(_array(idx.entry_refs, ">u8"))
    else:
        parts.append(_BALL_HEAD.pack(idx.size, idx.dim, idx.leaf_size, idx.node_count))
        parts.append(_array(idx.ids, ">u8"))
        parts.append(_array(idx.points, ">f8"))
        for column in (idx.node_start, idx.node_end, idx.node_left, idx.node_right):
            parts.append(_array(column, ">i8"))
        parts.append(_array(idx.centroids, ">f8"))
        parts.append(_array(idx.radii, ">f8"))
    return b"".join(parts)


def deserialize_index(blob: bytes) -> AnyIndex:
    if blob[:4] != MAGIC:
        raise ValueError("Not a serialized index (bad magic)")
    reader = _Reader(blob)
    reader.offset = 4
    (kind_byte,) = reader.unpack(_U8)
    kind = IndexKind(kind_byte)

    if kind is IndexKind.HASH:
        key = reader.key()
        (tag_code,) = reader.unpack(_U8)
        tag = None if tag_code == _NO_TAG else MetaTag.from_code(tag_code)
        (groups,) = reader.unpack(_U32)
        table = {}
        for _ in range(groups):
            value = reader.value().value
            table[value] = reader.ids()
        return HashIndex(key, tag, table)

    if kind is IndexKind.ORDERED:
        key = reader.key()
        (groups,) = reader.unpack(_U32)
        keys, postings = [], []
        for _ in range(groups):
            keys.append(reader.value().value)
            postings.append(reader.ids())
        return OrderedIndex(key, tuple(keys), tuple(postings))

    if kind is IndexKind.RTREE:
        capacity, min_entries, nodes, entries = reader.unpack(_RTREE_HEAD)
        return RTreeIndex(
            capacity=capacity,
            min_entries=min_entries,
            node_leaf=reader.array("u1", nodes, "bool"),
            node_first=reader.array(">i8", nodes, "int64"),
            node_count=reader.array(">i8", nodes, "int64"),
            entry_rects=reader.array(">f8", entries * 4, "float64").reshape(-1, 4),
            entry_refs=reader.array(">u8", entries, "uint64"),
        )

    n, d, leaf_size, nodes = reader.unpack(_BALL_HEAD)
    ids = reader.array(">u8", n, "uint64")
    points = reader.array(">f8", n * d, "float64").reshape(n, d)
    start, end, left, right = (reader.array(">i8", nodes, "int64") for _ in range(4))
    return BallTreeIndex(
        ids=ids,
        points=points,
        leaf_size=leaf_size,
        node_start=start,
        node_end=end,
        node_left=left,
        node_right=right,
        centroids=reader.array(">f8", nodes * d, "float64").reshape(nodes, d),
        radii=reader.array(">f8", nodes, "float64"),
    )


def save_index(collection: HasRecordStore, name: str, idx: AnyIndex) -> int:
    """Persist ``idx`` under ``name``; returns the serialized size."""
    blob = serialize_index(idx)
    collection.store.put(INDEX_TABLE, name.encode("utf-8"), blob)
    logger.info("Saved index", name=name, kind=kind_of(idx).name.lower(), size_bytes=len(blob))
    return len(blob)


def load_index(collection: HasRecordStore, name: str) -> AnyIndex:
    blob = collection.store.get(INDEX_TABLE, name.encode("utf-8"))
    if blob is None:
        raise RecordStoreError(f"No index named '{name}' in {collection.store.path}")
    return deserialize_index(blob)


def list_indexes(collection: HasRecordStore) -> List[str]:
    return [key.decode("utf-8") for key, _ in collection.store.scan(INDEX_TABLE)]
