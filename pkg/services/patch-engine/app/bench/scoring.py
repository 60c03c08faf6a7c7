"""Set-based accuracy against ground truth."""

from __future__ import annotations

from typing import AbstractSet, Hashable, Optional, Tuple

from ..core.patch import Patch
from .scene import GroundTruth, Observation


def precision_recall(found: AbstractSet[Hashable], truth: AbstractSet[Hashable]) -> Tuple[float, float]:
    """(precision, recall); an empty side scores 1.0."""
    hits = len(set(found) & set(truth))
    precision = hits / len(found) if found else 1.0
    recall = hits / len(truth) if truth else 1.0
    return precision, recall


def observe(truth: GroundTruth, patch: Patch) -> Optional[Observation]:
    """The ground-truth entity a detected patch shows, if any."""
    box = patch.bbox
    if box is None or patch.frameno is None:
        return None
    return truth.attribute(patch.frameno, box.as_tuple())
