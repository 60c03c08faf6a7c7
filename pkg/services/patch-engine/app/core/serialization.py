"""
Canonical binary record for a patch.

Layout (all integers big-endian):
    u32 body length
    u64 patch_id
    u8 rank, rank x u32 dims
    float32 x prod(dims) data
    u16 step count, then per step:
        u8-length op_name, u8 source kind,
        base frame: u16-length video_id + u64 frame_no | patch: u64 patch_id,
        u8 region flag [+ 4 x u32 region], u64 params_digest
    metadata: u16 entry count, then u8-length key + tagged value
"""

from __future__ import annotations

import struct
from typing import Tuple

import numpy as np

from ..errors import InvalidPatchError
from .metadata import decode_box, decode_key, decode_metadata, encode_box, encode_key, encode_metadata
from .patch import LineageRef, LineageStep, Patch, SourceKind

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

_FLOAT_BE = np.dtype(">f4")


def _encode_step(step: LineageStep) -> bytes:
    parts = [encode_key(step.op_name), _U8.pack(int(step.source_kind))]
    if step.is_base:
        video_id, frame_no = step.source_id
        raw = video_id.encode("utf-8")
        parts.append(_U16.pack(len(raw)) + raw + _U64.pack(frame_no))
    else:
        parts.append(_U64.pack(step.source_id))
    if step.region is None:
        parts.append(_U8.pack(0))
    else:
        parts.append(_U8.pack(1) + encode_box(step.region))
    parts.append(_U64.pack(step.params_digest))
    return b"".join(parts)


def _decode_step(buf: memoryview, offset: int) -> Tuple[LineageStep, int]:
    op_name, offset = decode_key(buf, offset)
    (kind,) = _U8.unpack_from(buf, offset)
    offset += 1
    source_kind = SourceKind(kind)
    if source_kind is SourceKind.BASE_FRAME:
        (length,) = _U16.unpack_from(buf, offset)
        offset += 2
        video_id = bytes(buf[offset:offset + length]).decode("utf-8")
        offset += length
        (frame_no,) = _U64.unpack_from(buf, offset)
        source_id = (video_id, frame_no)
    else:
        (source_id,) = _U64.unpack_from(buf, offset)
    offset += 8
    (has_region,) = _U8.unpack_from(buf, offset)
    offset += 1
    region = None
    if has_region:
        region, offset = decode_box(buf, offset)
    (digest,) = _U64.unpack_from(buf, offset)
    return LineageStep(op_name, source_kind, source_id, region, digest), offset + 8


def encode_patch(patch: Patch) -> bytes:
    patch.lineage.validate()
    if len(patch.shape) > 0xFF:
        raise InvalidPatchError(f"Rank {len(patch.shape)} too large to serialize")
    parts = [
        _U64.pack(patch.patch_id),
        _U8.pack(len(patch.shape)),
        b"".join(_U32.pack(d) for d in patch.shape),
        patch.data.astype(_FLOAT_BE).tobytes(),
        _U16.pack(len(patch.lineage.chain)),
        b"".join(_encode_step(step) for step in patch.lineage.chain),
        encode_metadata(patch.metadata),
    ]
    body = b"".join(parts)
    return _U32.pack(len(body)) + body


def decode_patch(record: bytes) -> Patch:
    buf = memoryview(record)
    (length,) = _U32.unpack_from(buf, 0)
    if length != len(buf) - 4:
        raise InvalidPatchError(f"Patch record length {length} does not match buffer of {len(buf) - 4}")
    offset = 4
    (patch_id,) = _U64.unpack_from(buf, offset)
    offset += 8
    (rank,) = _U8.unpack_from(buf, offset)
    offset += 1
    shape = struct.unpack_from(f">{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(buf, dtype=_FLOAT_BE, count=count, offset=offset).astype(np.float32)
    offset += 4 * count
    (steps,) = _U16.unpack_from(buf, offset)
    offset += 2
    chain = []
    for _ in range(steps):
        step, offset = _decode_step(buf, offset)
        chain.append(step)
    metadata, offset = decode_metadata(buf, offset)
    return Patch(patch_id, LineageRef(tuple(chain)), data, tuple(shape), metadata)
