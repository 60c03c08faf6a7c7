"""
Delta + deflate frame codec.

Frame 0 of a clip is stored intra (raw bytes); every later frame is the
byte-wise wrapping difference from the previous *decoded* frame. The
whole byte stream is deflate-compressed. Lossy mode quantizes each
channel value before prediction, so the decoder reproduces exactly what
the encoder predicted from.

Decoding is strictly sequential: frame i is only available after frames
0..i-1 have been reconstructed.
"""

from __future__ import annotations

import struct
import zlib
from enum import Enum
from typing import Iterable, Iterator, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import FrameShapeError

# count, width, height, mode, quant_step
CLIP_HEADER = struct.Struct(">IIIBB")

COMPRESSION_LEVEL = 6
READ_CHUNK = 1 << 16


class CodecMode(str, Enum):
    LOSSLESS = "lossless"
    LOSSY = "lossy"


class CodecConfig(BaseModel):
    """Codec mode and quantization step (lossy only)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: CodecMode = CodecMode.LOSSLESS
    quant_step: Optional[int] = Field(default=None, ge=1, le=128)

    @model_validator(mode="after")
    def _step_iff_lossy(self) -> CodecConfig:
        if self.mode is CodecMode.LOSSY and self.quant_step is None:
            raise ValueError("lossy codec requires quant_step")
        if self.mode is CodecMode.LOSSLESS and self.quant_step is not None:
            raise ValueError("lossless codec takes no quant_step")
        return self

    @classmethod
    def lossless(cls) -> CodecConfig:
        return cls()

    @classmethod
    def lossy(cls, quant_step: int) -> CodecConfig:
        return cls(mode=CodecMode.LOSSY, quant_step=quant_step)

    @property
    def mode_byte(self) -> int:
        return 0 if self.mode is CodecMode.LOSSLESS else 1

    def describe(self) -> str:
        return "lossless" if self.mode is CodecMode.LOSSLESS else f"lossy/q{self.quant_step}"


def quantize(pixels: np.ndarray, step: int) -> np.ndarray:
    """v -> floor(v / step) * step + step // 2, clamped to 255."""
    wide = pixels.astype(np.uint16)
    out = (wide // step) * step + step // 2
    return np.minimum(out, 255).astype(np.uint8)


class ClipEncoder:
    """Streams frames of one shape into a compressed clip blob."""

    def __init__(self, codec: CodecConfig):
        self.codec = codec
        self.count = 0
        self.width = 0
        self.height = 0
        self._previous: Optional[np.ndarray] = None
        self._compressor = zlib.compressobj(COMPRESSION_LEVEL)
        self._chunks: list = []

    def add(self, pixels: np.ndarray) -> None:
        if self._previous is None:
            self.height, self.width = int(pixels.shape[0]), int(pixels.shape[1])
        elif pixels.shape != self._previous.shape:
            raise FrameShapeError(
                f"Frame of shape {pixels.shape} in a clip of shape {self._previous.shape}"
            )
        if self.codec.mode is CodecMode.LOSSY:
            pixels = quantize(pixels, self.codec.quant_step)
        if self._previous is None:
            residual = pixels
        else:
            residual = np.subtract(pixels, self._previous, dtype=np.uint8)
        self._chunks.append(self._compressor.compress(np.ascontiguousarray(residual).tobytes()))
        self._previous = pixels
        self.count += 1

    def finish(self) -> bytes:
        self._chunks.append(self._compressor.flush())
        header = CLIP_HEADER.pack(
            self.count, self.width, self.height, self.codec.mode_byte, self.codec.quant_step or 0
        )
        return header + b"".join(self._chunks)


def encode_clip(frames: Iterable[np.ndarray], codec: CodecConfig) -> bytes:
    encoder = ClipEncoder(codec)
    for pixels in frames:
        encoder.add(pixels)
    return encoder.finish()


class ClipDecoder:
    """
    Sequential decoder over one clip blob.

    Decompression is incremental, so stopping after frame k costs only
    the bytes up to frame k.
    """

    def __init__(self, blob: bytes):
        self.count, self.width, self.height, mode, step = CLIP_HEADER.unpack_from(blob, 0)
        self.codec = CodecConfig.lossless() if mode == 0 else CodecConfig.lossy(step)
        self.frame_bytes = self.width * self.height * 3
        self.decoded = 0
        self._payload = memoryview(blob)[CLIP_HEADER.size:]
        self._cursor = 0
        self._tail = b""
        self._surplus = bytearray()
        self._flushed = False
        self._decompressor = zlib.decompressobj()
        self._previous: Optional[np.ndarray] = None

    def _read_exact(self, size: int) -> bytes:
        out = bytearray(self._surplus[:size])
        del self._surplus[:size]
        while len(out) < size:
            if self._tail:
                data = self._tail
            elif self._cursor < len(self._payload):
                data = bytes(self._payload[self._cursor:self._cursor + READ_CHUNK])
                self._cursor += len(data)
            else:
                # input exhausted; drain whatever inflate still holds
                rest = b"" if self._flushed else self._decompressor.flush()
                self._flushed = True
                if not rest:
                    break
                self._surplus += rest
                take = size - len(out)
                out += self._surplus[:take]
                del self._surplus[:take]
                continue
            out += self._decompressor.decompress(data, size - len(out))
            self._tail = self._decompressor.unconsumed_tail
        if len(out) != size:
            raise zlib.error(f"Clip stream ended after {len(out)} of {size} bytes")
        return bytes(out)

    def next_frame(self) -> np.ndarray:
        if self.decoded >= self.count:
            raise IndexError(f"Clip holds only {self.count} frames")
        residual = np.frombuffer(self._read_exact(self.frame_bytes), dtype=np.uint8)
        residual = residual.reshape(self.height, self.width, 3)
        if self._previous is None:
            pixels = residual.copy()
        else:
            pixels = np.add(self._previous, residual, dtype=np.uint8)
        pixels.setflags(write=False)
        self._previous = pixels
        self.decoded += 1
        return pixels

    def __iter__(self) -> Iterator[np.ndarray]:
        while self.decoded < self.count:
            yield self.next_frame()
