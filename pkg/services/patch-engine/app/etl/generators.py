"""
Patch generators: frames in, patches out.

Each generator is a pure function of the frame and its GeneratorSpec (the
label noise of the blob detector is drawn from a generator seeded by
``GeneratorSpec.seed`` and the frame number), so re-running a pipeline
yields identical patches and ids.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Iterator, List, Tuple

import numpy as np
from scipy import ndimage

from ..core.hashing import combine
from ..core.metadata import BoundingBox
from ..core.patch import Frame, Patch, make_patch
from .glyphs import BLACK_MAX, GLYPH_H, GLYPH_W, decode_glyph, find_glyph
from .specs import GeneratorKind, GeneratorSpec

Generator = Callable[[Frame, GeneratorSpec, int], List[Patch]]


def _base_metadata(frame: Frame) -> Dict[str, int]:
    return {"frame_height": frame.height}


def _whole_image(frame: Frame, spec: GeneratorSpec, digest: int) -> List[Patch]:
    region = BoundingBox(0, 0, frame.width, frame.height)
    return [make_patch(frame, region, _base_metadata(frame), spec.name, digest)]


def _tiles(frame: Frame, spec: GeneratorSpec, digest: int) -> List[Patch]:
    # ragged right and bottom remainders are dropped
    out = []
    for y in range(0, frame.height - spec.tile_h + 1, spec.tile_h):
        for x in range(0, frame.width - spec.tile_w + 1, spec.tile_w):
            region = BoundingBox(x, y, x + spec.tile_w, y + spec.tile_h)
            out.append(make_patch(frame, region, _base_metadata(frame), spec.name, digest))
    return out


def _components(mask: np.ndarray, min_area: int) -> List[BoundingBox]:
    """Bounding boxes of 4-connected components with at least ``min_area`` pixels."""
    labels, count = ndimage.label(mask)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    boxes = []
    for number, slices in enumerate(ndimage.find_objects(labels), start=1):
        if slices is None or areas[number] < min_area:
            continue
        rows, cols = slices
        boxes.append(BoundingBox(cols.start, rows.start, cols.stop, rows.stop))
    return boxes


def _blob_detector(frame: Frame, spec: GeneratorSpec, digest: int) -> List[Patch]:
    pixels = frame.pixels.astype(np.int16)
    labels = spec.labels()
    detections: List[Tuple[Tuple[int, int, int, int], int, str]] = []
    for index, entry in enumerate(spec.palette):
        color = np.asarray(entry.rgb, dtype=np.int16)
        mask = np.abs(pixels - color).max(axis=2) <= spec.color_tolerance
        for box in _components(mask, spec.min_area):
            detections.append(((box.y1, box.x1, box.y2, box.x2), index, entry.label))
    detections.sort(key=lambda item: (item[0], item[1]))

    rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, frame.frame_no])
    out = []
    for (y1, x1, y2, x2), index, label in detections:
        if spec.label_noise_p > 0.0 and len(labels) > 1 and rng.random() < spec.label_noise_p:
            others = [other for other in labels if other != label]
            label = others[int(rng.integers(len(others)))]
        metadata = _base_metadata(frame)
        metadata["label"] = label
        patch = make_patch(
            frame, BoundingBox(x1, y1, x2, y2), metadata, spec.name, combine(digest, index)
        )
        out.append(patch)
    return out


def _glyph_reader(frame: Frame, spec: GeneratorSpec, digest: int) -> List[Patch]:
    lit = frame.pixels.max(axis=2) > BLACK_MAX
    out = []
    for box in sorted(_components(lit, GLYPH_W * GLYPH_H), key=lambda b: (b.y1, b.x1)):
        if box.width < GLYPH_W or box.height < GLYPH_H:
            continue
        inside = frame.pixels[box.y1:box.y2, box.x1:box.x2]
        found = find_glyph(inside)
        if found is None:
            continue
        row, col = found
        strip = BoundingBox(box.x1 + col, box.y1 + row, box.x1 + col + GLYPH_W, box.y1 + row + GLYPH_H)
        value = decode_glyph(frame.pixels[strip.y1:strip.y2, strip.x1:strip.x2])
        metadata = _base_metadata(frame)
        metadata["text"] = str(value)
        out.append(make_patch(frame, strip, metadata, spec.name, digest))
    return out


GENERATORS: Dict[GeneratorKind, Generator] = {
    GeneratorKind.WHOLE_IMAGE: _whole_image,
    GeneratorKind.TILES: _tiles,
    GeneratorKind.BLOB_DETECTOR: _blob_detector,
    GeneratorKind.GLYPH_READER: _glyph_reader,
}


def generate(frames: Iterable[Frame], spec: GeneratorSpec) -> Iterator[Patch]:
    """Lazily turn each frame into zero or more patches."""
    produce = GENERATORS[spec.kind]
    digest = spec.digest()
    for frame in frames:
        yield from produce(frame, spec, digest)
