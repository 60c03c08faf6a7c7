"""Turn patches into index entries."""

from typing import Iterable, Iterator, Tuple

import numpy as np

from ..core.metadata import BoundingBox
from ..core.patch import Patch
from ..errors import MissingKeyError, ShapeError


def feature_points(patches: Iterable[Patch]) -> Iterator[Tuple[int, np.ndarray]]:
    """(patch_id, feature vector) for Ball-tree builds."""
    for patch in patches:
        if not patch.is_feature:
            raise ShapeError(f"Patch {patch.patch_id:#018x} has shape {list(patch.shape)}, not a feature vector")
        yield patch.patch_id, patch.features()


def box_entries(patches: Iterable[Patch], key: str = "bbox") -> Iterator[Tuple[BoundingBox, int]]:
    """(bbox, patch_id) for R-tree builds."""
    for patch in patches:
        box = patch.get(key)
        if not isinstance(box, BoundingBox):
            raise MissingKeyError(key, patch.patch_id)
        yield box, patch.patch_id
