"""
Video storage layouts over the embedded record store.

    frame_file      one record per frame, keyed by frame number
    encoded_file    one sequentially decoded blob for the whole video
    segmented_file  independently decoded clips keyed by start frame

All keys are 8-byte big-endian integers so key order is numeric order.
The descriptor lives in the same table under the reserved sidecar key.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from shared.store.record_store import RecordStore, RecordStoreError, get_store, release_store

from ..core.patch import CHANNELS, Frame
from ..errors import FrameShapeError, MissingFrameError, OutOfOrderFrameError
from .codec import ClipDecoder, ClipEncoder, CodecConfig

logger = structlog.get_logger(__name__)

VIDEO_TABLE = "video"

# width, height, channels, encoding (0 = raw)
FRAME_HEADER = struct.Struct(">IIBB")
RAW_ENCODING = 0

FramePredicate = Callable[[int], bool]
FrameRange = Tuple[int, int]


def frame_key(frame_no: int) -> bytes:
    return frame_no.to_bytes(8, "big")


def key_frame(key: bytes) -> int:
    return int.from_bytes(key, "big")


class Layout(str, Enum):
    FRAME_FILE = "frame_file"
    ENCODED_FILE = "encoded_file"
    SEGMENTED_FILE = "segmented_file"


class StoreDescriptor(BaseModel):
    """Physical design of a stored video."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    layout: Layout
    path: str
    codec: CodecConfig = CodecConfig()
    clip_len: int = Field(default=64, ge=1)
    video_id: str = "video"


class StoredVideoInfo(BaseModel):
    """Sidecar record: the descriptor plus what ingest observed."""

    model_config = ConfigDict(extra="forbid")

    descriptor: StoreDescriptor
    frame_count: int = 0
    width: int = 0
    height: int = 0


@dataclass
class IoCounters:
    records_read: int = 0
    frames_decoded: int = 0
    bytes_read: int = 0
    clips_decoded: int = 0

    def add(self, other: IoCounters) -> None:
        self.records_read += other.records_read
        self.frames_decoded += other.frames_decoded
        self.bytes_read += other.bytes_read
        self.clips_decoded += other.clips_decoded

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


def _pack_frame(frame: Frame) -> bytes:
    return FRAME_HEADER.pack(frame.width, frame.height, CHANNELS, RAW_ENCODING) + frame.to_bytes()


def _unpack_frame(video_id: str, frame_no: int, value: bytes) -> Frame:
    width, height, channels, encoding = FRAME_HEADER.unpack_from(value, 0)
    if channels != CHANNELS or encoding != RAW_ENCODING:
        raise RecordStoreError(f"Unsupported frame record (channels={channels}, encoding={encoding})")
    return Frame.from_bytes(video_id, frame_no, width, height, value[FRAME_HEADER.size:])


class VideoStore:
    """Read-only handle on an ingested video."""

    def __init__(self, store: RecordStore, info: StoredVideoInfo):
        self.store = store
        self.info = info

    @property
    def descriptor(self) -> StoreDescriptor:
        return self.info.descriptor

    @property
    def layout(self) -> Layout:
        return self.info.descriptor.layout

    @property
    def video_id(self) -> str:
        return self.info.descriptor.video_id

    @property
    def frame_count(self) -> int:
        return self.info.frame_count

    @property
    def width(self) -> int:
        return self.info.width

    @property
    def height(self) -> int:
        return self.info.height

    def _frame(self, frame_no: int, pixels: np.ndarray) -> Frame:
        return Frame(self.video_id, frame_no, pixels)

    def _clip_blob(self, start: int, counters: IoCounters) -> bytes:
        blob = self.store.get(VIDEO_TABLE, frame_key(start))
        if blob is None:
            raise MissingFrameError(f"Clip starting at frame {start} is missing from {self.store.path}")
        counters.records_read += 1
        counters.bytes_read += len(blob)
        counters.clips_decoded += 1
        return blob

    def scan(
        self,
        frame_range: Optional[FrameRange] = None,
        counters: Optional[IoCounters] = None,
        frame_filter: Optional[FramePredicate] = None,
    ) -> Iterator[Frame]:
        """
        Yield frames in ascending order, restricted to [lo, hi).

        The range is pushed down as far as the layout allows; a range
        reaching past the stored frames yields the intersection.
        ``frame_filter`` is applied after decoding and does not change the
        counters.
        """
        if frame_range is not None and frame_range[0] >= frame_range[1]:
            raise ValueError(f"Empty frame range {frame_range}")
        lo, hi = frame_range if frame_range is not None else (0, self.frame_count)
        lo, hi = max(lo, 0), min(hi, self.frame_count)
        counters = counters if counters is not None else IoCounters()
        if lo >= hi:
            return iter(())
        if self.layout is Layout.FRAME_FILE:
            source = self._scan_frames(lo, hi, counters)
        elif self.layout is Layout.SEGMENTED_FILE:
            source = self._scan_clips(lo, hi, counters)
        else:
            source = self._scan_encoded(lo, hi, counters)
        if frame_filter is None:
            return source
        return (frame for frame in source if frame_filter(frame.frame_no))

    def _scan_frames(self, lo: int, hi: int, counters: IoCounters) -> Iterator[Frame]:
        for key, value in self.store.scan(VIDEO_TABLE, frame_key(lo), frame_key(hi)):
            counters.records_read += 1
            counters.bytes_read += len(value)
            yield _unpack_frame(self.video_id, key_frame(key), value)

    def _scan_clips(self, lo: int, hi: int, counters: IoCounters) -> Iterator[Frame]:
        clip_len = self.descriptor.clip_len
        first = lo - lo % clip_len
        for key, blob in self.store.scan(VIDEO_TABLE, frame_key(first), frame_key(hi)):
            counters.records_read += 1
            counters.bytes_read += len(blob)
            counters.clips_decoded += 1
            start = key_frame(key)
            # whole clip is decoded even when the range ends inside it
            for offset, pixels in enumerate(ClipDecoder(blob)):
                counters.frames_decoded += 1
                frame_no = start + offset
                if lo <= frame_no < hi:
                    yield self._frame(frame_no, pixels)

    def _scan_encoded(self, lo: int, hi: int, counters: IoCounters) -> Iterator[Frame]:
        decoder = ClipDecoder(self._clip_blob(0, counters))
        for frame_no in range(hi):
            pixels = decoder.next_frame()
            counters.frames_decoded += 1
            if frame_no >= lo:
                yield self._frame(frame_no, pixels)

    def random_access(self, frame_no: int, counters: Optional[IoCounters] = None) -> Frame:
        """Fetch one frame; clip layouts decode up to its offset."""
        counters = counters if counters is not None else IoCounters()
        if not 0 <= frame_no < self.frame_count:
            raise MissingFrameError(
                f"Frame {frame_no} not in video '{self.video_id}' ({self.frame_count} frames)"
            )
        if self.layout is Layout.FRAME_FILE:
            value = self.store.get(VIDEO_TABLE, frame_key(frame_no))
            if value is None:
                raise MissingFrameError(f"Frame {frame_no} is missing from {self.store.path}")
            counters.records_read += 1
            counters.bytes_read += len(value)
            return _unpack_frame(self.video_id, frame_no, value)

        if self.layout is Layout.SEGMENTED_FILE:
            clip_len = self.descriptor.clip_len
            start = frame_no - frame_no % clip_len
        else:
            start = 0
        decoder = ClipDecoder(self._clip_blob(start, counters))
        for _ in range(frame_no - start + 1):
            pixels = decoder.next_frame()
            counters.frames_decoded += 1
        return self._frame(frame_no, pixels)

    def random_access_many(
        self, frame_nos: Iterable[int], counters: Optional[IoCounters] = None
    ) -> Dict[int, Frame]:
        """
        Fetch a set of frames by number.

        Clip layouts read each touched clip once and decode it up to the
        largest wanted offset, so records_read is the number of distinct
        clips and never exceeds a full scan's.
        """
        counters = counters if counters is not None else IoCounters()
        wanted = sorted(set(frame_nos))
        if self.layout is Layout.FRAME_FILE:
            return {frame_no: self.random_access(frame_no, counters) for frame_no in wanted}

        for frame_no in wanted:
            if not 0 <= frame_no < self.frame_count:
                raise MissingFrameError(
                    f"Frame {frame_no} not in video '{self.video_id}' ({self.frame_count} frames)"
                )
        clip_len = self.descriptor.clip_len if self.layout is Layout.SEGMENTED_FILE else None
        by_clip: Dict[int, List[int]] = {}
        for frame_no in wanted:
            start = frame_no - frame_no % clip_len if clip_len else 0
            by_clip.setdefault(start, []).append(frame_no)

        frames: Dict[int, Frame] = {}
        for start, members in by_clip.items():
            decoder = ClipDecoder(self._clip_blob(start, counters))
            targets = set(members)
            for frame_no in range(start, members[-1] + 1):
                pixels = decoder.next_frame()
                counters.frames_decoded += 1
                if frame_no in targets:
                    frames[frame_no] = self._frame(frame_no, pixels)
        return frames

    def size_bytes(self) -> int:
        return self.store.size_bytes()

    def checksum(self) -> str:
        """SHA-256 over the frame or clip records in key order (sidecar excluded)."""
        digest = hashlib.sha256()
        for key, value in self.store.scan(VIDEO_TABLE, None, RecordStore.SIDECAR_KEY):
            digest.update(key)
            digest.update(len(value).to_bytes(8, "big"))
            digest.update(value)
        return digest.hexdigest()

    def __repr__(self) -> str:
        return (
            f"VideoStore({self.video_id!r}, layout={self.layout.value}, "
            f"frames={self.frame_count}, path={self.store.path!r})"
        )


class _IngestState:
    """Checks frame order and shape while records stream into the store."""

    def __init__(self, video_id: str):
        self.video_id = video_id
        self.count = 0
        self.width = 0
        self.height = 0

    def accept(self, frame: Frame) -> Frame:
        if frame.frame_no != self.count:
            raise OutOfOrderFrameError(f"Expected frame {self.count}, got {frame.frame_no}")
        if self.count == 0:
            self.width, self.height = frame.width, frame.height
        elif (frame.width, frame.height) != (self.width, self.height):
            raise FrameShapeError(
                f"Frame {frame.frame_no} is {frame.width}x{frame.height}, "
                f"video is {self.width}x{self.height}"
            )
        self.count += 1
        return frame


def _frame_records(frames: Iterable[Frame], state: _IngestState) -> Iterator[Tuple[bytes, bytes]]:
    for frame in frames:
        state.accept(frame)
        yield frame_key(frame.frame_no), _pack_frame(frame)


def _clip_records(
    frames: Iterable[Frame], state: _IngestState, desc: StoreDescriptor
) -> Iterator[Tuple[bytes, bytes]]:
    encoder: Optional[ClipEncoder] = None
    start = 0
    for frame in frames:
        state.accept(frame)
        if encoder is None:
            encoder, start = ClipEncoder(desc.codec), frame.frame_no
        encoder.add(frame.pixels)
        if encoder.count == desc.clip_len:
            yield frame_key(start), encoder.finish()
            encoder = None
    if encoder is not None:
        yield frame_key(start), encoder.finish()


def _encoded_records(
    frames: Iterable[Frame], state: _IngestState, desc: StoreDescriptor
) -> Iterator[Tuple[bytes, bytes]]:
    encoder = ClipEncoder(desc.codec)
    for frame in frames:
        state.accept(frame)
        encoder.add(frame.pixels)
    if encoder.count:
        yield frame_key(0), encoder.finish()


def ingest(frames: Iterable[Frame], desc: StoreDescriptor) -> VideoStore:
    """
    Store a video under ``desc``, replacing anything already at the path.

    Frames must arrive as 0, 1, 2, ... and share one resolution.
    """
    release_store(desc.path)
    for suffix in ("", "-journal", "-wal"):
        if os.path.exists(desc.path + suffix):
            os.remove(desc.path + suffix)
    store = get_store(desc.path)
    store.table(VIDEO_TABLE)

    state = _IngestState(desc.video_id)
    if desc.layout is Layout.FRAME_FILE:
        records = _frame_records(frames, state)
    elif desc.layout is Layout.SEGMENTED_FILE:
        records = _clip_records(frames, state, desc)
    else:
        records = _encoded_records(frames, state, desc)
    written = store.put_many(VIDEO_TABLE, records)

    info = StoredVideoInfo(descriptor=desc, frame_count=state.count, width=state.width, height=state.height)
    store.put(VIDEO_TABLE, RecordStore.SIDECAR_KEY, info.model_dump_json().encode("utf-8"))
    handle = VideoStore(store, info)
    logger.info(
        "Ingested video",
        video_id=desc.video_id,
        layout=desc.layout.value,
        codec=desc.codec.describe(),
        frames=state.count,
        records=written,
        size_bytes=handle.size_bytes(),
    )
    return handle


def open_store(path: str) -> VideoStore:
    """Reopen an ingested video from its sidecar descriptor."""
    store = get_store(path, create=False)
    raw = store.get(VIDEO_TABLE, RecordStore.SIDECAR_KEY)
    if raw is None:
        raise RecordStoreError(f"No stored video at {path}")
    return VideoStore(store, StoredVideoInfo.model_validate_json(raw))


def scan(
    handle: VideoStore,
    frame_range: Optional[FrameRange] = None,
    counters: Optional[IoCounters] = None,
    frame_filter: Optional[FramePredicate] = None,
) -> Iterator[Frame]:
    return handle.scan(frame_range, counters, frame_filter)


def random_access(handle: VideoStore, frame_no: int, counters: Optional[IoCounters] = None) -> Frame:
    return handle.random_access(frame_no, counters)


def store_size(handle: VideoStore) -> int:
    """Bytes on disk, including keys, pages and record overhead."""
    return handle.size_bytes()


def store_checksum(handle: VideoStore) -> str:
    return handle.checksum()
