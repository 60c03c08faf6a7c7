"""
Materialized patch collections.

A collection is one record-store file with four tables:

    patches   patch_id (u64 BE) -> canonical patch record
    sequence  arrival number (u64 BE) -> patch_id, so scans replay stream order
    lineage   video_id + 0x00 + frame_no (u64 BE) + patch_id -> empty;
              the forward lineage index from base frames to patches
    meta      "info" -> collection info (schema, count) as JSON
"""

from __future__ import annotations

import os
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import structlog
from pydantic import BaseModel, ConfigDict

from shared.store.record_store import RecordStore, RecordStoreError, get_store, release_store

from ..core.patch import FrameKey, Patch, base_frames_of
from ..core.schema import PatchSchema
from ..core.serialization import decode_patch, encode_patch
from ..errors import DuplicatePatchError
from ..storage.video_store import IoCounters

logger = structlog.get_logger(__name__)

PATCH_TABLE = "patches"
SEQUENCE_TABLE = "sequence"
LINEAGE_TABLE = "lineage"
META_TABLE = "meta"
INFO_KEY = b"info"

READ_BATCH = 256


def _id_key(patch_id: int) -> bytes:
    return patch_id.to_bytes(8, "big")


def lineage_prefix(video_id: str) -> bytes:
    return video_id.encode("utf-8") + b"\x00"


def lineage_key(video_id: str, frame_no: int, patch_id: Optional[int] = None) -> bytes:
    key = lineage_prefix(video_id) + frame_no.to_bytes(8, "big")
    return key if patch_id is None else key + _id_key(patch_id)


def _split_lineage_key(key: bytes) -> Tuple[FrameKey, int]:
    sep = key.index(b"\x00")
    video_id = key[:sep].decode("utf-8")
    frame_no = int.from_bytes(key[sep + 1:sep + 9], "big")
    return (video_id, frame_no), int.from_bytes(key[sep + 9:], "big")


class CollectionInfo(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = ""
    count: int = 0
    output_schema: PatchSchema = PatchSchema()


class PatchCollection:
    """Read handle on a materialized collection."""

    def __init__(self, store: RecordStore, info: CollectionInfo):
        self.store = store
        self.info = info

    @property
    def path(self) -> str:
        return self.store.path

    @property
    def schema(self) -> PatchSchema:
        return self.info.output_schema

    def __len__(self) -> int:
        return self.info.count

    def scan(self, counters: Optional[IoCounters] = None) -> Iterator[Patch]:
        """Every patch, in the order it was materialized."""
        batch: List[bytes] = []
        for _, value in self.store.scan(SEQUENCE_TABLE):
            batch.append(value)
            if len(batch) >= READ_BATCH:
                yield from self._fetch(batch, counters)
                batch = []
        if batch:
            yield from self._fetch(batch, counters)

    def _fetch(self, keys: List[bytes], counters: Optional[IoCounters]) -> Iterator[Patch]:
        found = self.store.get_many(PATCH_TABLE, keys)
        for key in keys:
            record = found.get(key)
            if record is None:
                raise RecordStoreError(f"Patch {int.from_bytes(key, 'big'):#018x} missing from {self.path}")
            if counters is not None:
                counters.records_read += 1
                counters.bytes_read += len(record)
            yield decode_patch(record)

    def get(self, patch_id: int, counters: Optional[IoCounters] = None) -> Optional[Patch]:
        record = self.store.get(PATCH_TABLE, _id_key(patch_id))
        if record is None:
            return None
        if counters is not None:
            counters.records_read += 1
            counters.bytes_read += len(record)
        return decode_patch(record)

    def get_many(self, patch_ids: Sequence[int], counters: Optional[IoCounters] = None) -> List[Patch]:
        """Patches for ``patch_ids`` in the given order; unknown ids are skipped."""
        keys = [_id_key(pid) for pid in patch_ids]
        found = self.store.get_many(PATCH_TABLE, keys)
        return list(self._fetch([key for key in keys if key in found], counters))

    def forward_lineage(self) -> List[Tuple[FrameKey, List[int]]]:
        """(video_id, frame_no) -> ids of the patches derived from it, in key order."""
        out: List[Tuple[FrameKey, List[int]]] = []
        for key, _ in self.store.scan(LINEAGE_TABLE):
            frame, pid = _split_lineage_key(key)
            if out and out[-1][0] == frame:
                out[-1][1].append(pid)
            else:
                out.append((frame, [pid]))
        return out

    def patches_of_frame(self, video_id: str, frame_no: int) -> List[int]:
        return [
            _split_lineage_key(key)[1]
            for key, _ in self.store.scan_prefix(LINEAGE_TABLE, lineage_key(video_id, frame_no))
        ]

    def size_bytes(self) -> int:
        return self.store.size_bytes()

    def describe(self) -> Dict[str, object]:
        return {
            "path": self.path,
            "name": self.info.name,
            "patches": len(self),
            "frames": len(self.forward_lineage()),
            "size_bytes": self.size_bytes(),
            "schema": self.schema.model_dump(mode="json"),
        }

    def __repr__(self) -> str:
        return f"PatchCollection({self.path!r}, patches={len(self)})"


class _Writer:
    def __init__(self, store: RecordStore):
        self.store = store
        self.seen: Set[int] = set()
        self.patches: List[Tuple[bytes, bytes]] = []
        self.sequence: List[Tuple[bytes, bytes]] = []
        self.lineage: List[Tuple[bytes, bytes]] = []

    def add(self, patch: Patch) -> None:
        if patch.patch_id in self.seen:
            raise DuplicatePatchError(f"Patch id {patch.patch_id:#018x} materialized twice")
        key = _id_key(patch.patch_id)
        self.patches.append((key, encode_patch(patch)))
        self.sequence.append((_id_key(len(self.seen)), key))
        for video_id, frame_no in base_frames_of(patch):
            self.lineage.append((lineage_key(video_id, frame_no, patch.patch_id), b""))
        self.seen.add(patch.patch_id)
        if len(self.patches) >= RecordStore.WRITE_BATCH:
            self.flush()

    def flush(self) -> None:
        for table, rows in ((PATCH_TABLE, self.patches), (SEQUENCE_TABLE, self.sequence), (LINEAGE_TABLE, self.lineage)):
            if rows:
                self.store.put_many(table, rows)
        self.patches, self.sequence, self.lineage = [], [], []


def _reset(path: str) -> RecordStore:
    release_store(path)
    for suffix in ("", "-journal", "-wal"):
        if os.path.exists(path + suffix):
            os.remove(path + suffix)
    store = get_store(path)
    for table in (PATCH_TABLE, SEQUENCE_TABLE, LINEAGE_TABLE, META_TABLE):
        store.table(table)
    return store


def materialize(
    patches: Iterable[Patch],
    path: str,
    schema: Optional[PatchSchema] = None,
    name: str = "",
) -> PatchCollection:
    """
    Persist a patch stream, replacing any collection at ``path``.

    Raises DuplicatePatchError if an id repeats; what was written before
    the duplicate stays on disk but the collection info is not updated.
    """
    store = _reset(path)
    writer = _Writer(store)
    for patch in patches:
        writer.add(patch)
    writer.flush()
    info = CollectionInfo(name=name, count=len(writer.seen), output_schema=schema or PatchSchema())
    store.put(META_TABLE, INFO_KEY, info.model_dump_json().encode("utf-8"))
    logger.info("Materialized collection", path=path, name=name, patches=info.count)
    return PatchCollection(store, info)


def open_collection(path: str) -> PatchCollection:
    store = get_store(path, create=False)
    raw = store.get(META_TABLE, INFO_KEY)
    if raw is None:
        raise RecordStoreError(f"No patch collection at {path}")
    return PatchCollection(store, CollectionInfo.model_validate_json(raw))
