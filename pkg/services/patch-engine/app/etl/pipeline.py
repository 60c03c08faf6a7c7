"""Composition of generator and transformer stages."""

from __future__ import annotations

import time
from typing import Iterable, Iterator, Optional, Sequence

import structlog

from ..core.patch import Frame, Patch
from .collection import PatchCollection, materialize
from .generators import generate
from .specs import GeneratorSpec, TransformerSpec
from .transformers import transform
from .validation import check_pipeline

logger = structlog.get_logger(__name__)


def run_pipeline(
    frames: Iterable[Frame],
    generator: GeneratorSpec,
    transformers: Sequence[TransformerSpec] = (),
) -> Iterator[Patch]:
    """Lazily chain ``generator`` and ``transformers`` over ``frames``."""
    stream = generate(frames, generator)
    for spec in transformers:
        stream = transform(stream, spec)
    return stream


def build_collection(
    frames: Iterable[Frame],
    generator: GeneratorSpec,
    transformers: Sequence[TransformerSpec],
    path: str,
    name: Optional[str] = None,
) -> PatchCollection:
    """Validate, run and materialize a pipeline in one pass."""
    stages = [generator, *transformers]
    schema = check_pipeline(stages)
    started = time.perf_counter()
    collection = materialize(
        run_pipeline(frames, generator, transformers),
        path,
        schema=schema,
        name=name or " -> ".join(stage.name for stage in stages),
    )
    logger.debug(
        "Pipeline finished",
        path=path,
        stages=len(stages),
        patches=len(collection),
        elapsed_ms=round((time.perf_counter() - started) * 1000, 3),
    )
    return collection
