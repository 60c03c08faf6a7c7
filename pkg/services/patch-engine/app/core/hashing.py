"""64-bit FNV-1a hashing for parameter digests and patch identifiers."""

from __future__ import annotations

import struct
from typing import Any, Mapping

from .metadata import encode_key, encode_metadata, freeze_metadata

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def params_digest(op_name: str, params: Mapping[str, Any] | None = None) -> int:
    """
    Digest of an operation and its parameters.

    The parameter list is serialized canonically (keys sorted, values
    tagged) so the digest is independent of dict ordering.
    """
    return fnv1a64(encode_key(op_name) + encode_metadata(freeze_metadata(params)))


def combine(*parts: Any) -> int:
    """Hash a sequence of ints, strings and bytes into one 64-bit id."""
    chunks = []
    for part in parts:
        if isinstance(part, bytes):
            chunks.append(b"b" + struct.pack(">I", len(part)) + part)
        elif isinstance(part, str):
            raw = part.encode("utf-8")
            chunks.append(b"s" + struct.pack(">I", len(raw)) + raw)
        elif part is None:
            chunks.append(b"n")
        else:
            chunks.append(b"i" + struct.pack(">Q", int(part) & _MASK64))
    return fnv1a64(b"".join(chunks))
