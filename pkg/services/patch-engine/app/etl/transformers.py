"""Patch transformers: featurization and depth annotation."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from ..core.patch import Patch, derive_patch
from ..errors import MissingKeyError, ShapeError
from .specs import TransformerKind, TransformerSpec


def _require_pixels(patch: Patch, stage: str) -> None:
    if not patch.is_pixels:
        raise ShapeError(
            f"{stage} needs pixel data [h, w, 3]; patch {patch.patch_id:#018x} has {list(patch.shape)}"
        )


def color_histogram(pixels: np.ndarray, bins: int) -> np.ndarray:
    """
    Concatenated per-channel histograms, each normalized by pixel count.

    Value v falls in bin floor(v * bins / 256).
    """
    flat = pixels.reshape(-1, 3)
    count = flat.shape[0]
    index = np.minimum((flat.astype(np.int64) * bins) // 256, bins - 1)
    hist = np.empty(3 * bins, dtype=np.float64)
    for channel in range(3):
        hist[channel * bins:(channel + 1) * bins] = np.bincount(index[:, channel], minlength=bins) / count
    return hist


def depth_of(patch: Patch, frame_height: int) -> float:
    return 1.0 - patch.bbox.y2 / frame_height


def transform(patches: Iterable[Patch], spec: TransformerSpec) -> Iterator[Patch]:
    """Lazily derive one patch per input."""
    digest = spec.digest()
    for patch in patches:
        _require_pixels(patch, spec.name)
        if spec.kind is TransformerKind.COLOR_HISTOGRAM:
            hist = color_histogram(patch.array, spec.bins_per_channel)
            yield derive_patch(patch, spec.name, hist, {"hist_dims": spec.dims}, digest)
            continue

        height = spec.frame_height or patch.get("frame_height")
        if patch.bbox is None:
            raise MissingKeyError("bbox", patch.patch_id)
        if not height:
            raise MissingKeyError("frame_height", patch.patch_id)
        yield derive_patch(patch, spec.name, None, {"depth": depth_of(patch, height)}, digest)
