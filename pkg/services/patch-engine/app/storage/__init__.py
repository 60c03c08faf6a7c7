"""Raw video storage: frame, encoded and segmented layouts."""

from .codec import ClipDecoder, ClipEncoder, CodecConfig, CodecMode, encode_clip, quantize
from .video_store import (
    IoCounters,
    Layout,
    StoreDescriptor,
    StoredVideoInfo,
    VideoStore,
    frame_key,
    ingest,
    open_store,
    random_access,
    scan,
    store_checksum,
    store_size,
)

__all__ = [
    "ClipDecoder",
    "ClipEncoder",
    "CodecConfig",
    "CodecMode",
    "IoCounters",
    "Layout",
    "StoreDescriptor",
    "StoredVideoInfo",
    "VideoStore",
    "encode_clip",
    "frame_key",
    "ingest",
    "open_store",
    "quantize",
    "random_access",
    "scan",
    "store_checksum",
    "store_size",
]
