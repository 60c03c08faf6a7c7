"""
Seeded synthetic scenes with exact ground truth.

A ``video`` scene is a black background with rectangular entities moving
horizontally in their own lanes and bouncing off the frame edges. Each
entity is filled with its palette colour and carries a barcode strip of
its 16-bit id plus an accent block in a colour unique to the entity, so
distinct entities have distinct colour histograms while every crop of one
entity has the same histogram. An ``album`` scene is a set of unrelated
still images with planted near-duplicates.

All colours sit at histogram-bin centres (for 8 bins per channel) and the
pixel noise never exceeds a quarter bin, so noise never moves a pixel to
another bin.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Dict, Iterator, List, Literal, Optional, Set, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.patch import Frame
from ..errors import ConfigurationError, EntityTooLargeError
from ..etl.glyphs import GLYPH_H, GLYPH_W, encode_glyph
from ..etl.specs import PaletteEntry
from ..etl.transformers import color_histogram

logger = structlog.get_logger(__name__)

Box = Tuple[int, int, int, int]

DEFAULT_PALETTE: Tuple[PaletteEntry, ...] = (
    PaletteEntry(r=240, g=16, b=16, label="vehicle"),
    PaletteEntry(r=16, g=240, b=16, label="pedestrian"),
    PaletteEntry(r=16, g=16, b=240, label="cyclist"),
)

ACCENT_LEVELS = (48, 112, 176)
ACCENT_MIN_DISTANCE = 48
LANE_GAP = 2
MIN_RECT_W = 28
MIN_RECT_H = 8

ALBUM_BINS = 8
ALBUM_LEVELS = tuple(16 + 32 * k for k in range(ALBUM_BINS))
ALBUM_MIN_SIDE = 32
ALBUM_TRIES = 1000
DUPLICATE_BLOCK = 3
DISTINCT_MIN_DISTANCE = 0.3


def default_palette() -> List[PaletteEntry]:
    return list(DEFAULT_PALETTE)


def lossy_palette() -> List[PaletteEntry]:
    """Two labels 40 L-inf units apart, placed so coarse quantization pushes them out of tolerance."""
    return [
        PaletteEntry(r=200, g=66, b=66, label="vehicle"),
        PaletteEntry(r=200, g=106, b=66, label="pedestrian"),
    ]


class EntitySpec(BaseModel):
    """One scripted entity; unset fields are drawn from the scene seed."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    label: str
    entity_id: Optional[int] = Field(default=None, ge=0, le=0xFFFF)
    start: int = Field(default=0, ge=0)
    end: Optional[int] = Field(default=None, ge=0)
    width: Optional[int] = Field(default=None, ge=MIN_RECT_W)
    height: Optional[int] = Field(default=None, ge=MIN_RECT_H)


class SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["video", "album"] = "video"
    seed: int = Field(default=0, ge=0, lt=2**64)
    frames: int = Field(default=100, ge=0)
    width: int = Field(default=320, ge=1)
    height: int = Field(default=240, ge=1)
    entities: int = Field(default=5, ge=0)
    entity_specs: Optional[List[EntitySpec]] = None
    palette: List[PaletteEntry] = Field(default_factory=default_palette, min_length=1)
    rect_width: Tuple[int, int] = (28, 48)
    rect_height: Tuple[int, int] = (12, 24)
    speed: Tuple[int, int] = (1, 3)
    noise_amplitude: int = Field(default=4, ge=0, le=8)
    noise_mode: Literal["static", "temporal"] = "static"
    duplicates: int = Field(default=0, ge=0)
    video_id: str = Field(default="video", min_length=1)

    @model_validator(mode="after")
    def _check(self) -> SceneSpec:
        for name, (lo, hi), floor in (
            ("rect_width", self.rect_width, MIN_RECT_W),
            ("rect_height", self.rect_height, MIN_RECT_H),
            ("speed", self.speed, 0),
        ):
            if lo > hi:
                raise ValueError(f"{name} range ({lo}, {hi}) is empty")
            if lo < floor:
                raise ValueError(f"{name} must be at least {floor}, got {lo}")
        if self.kind == "album":
            if self.duplicates * 2 > self.frames:
                raise ValueError(f"{self.duplicates} duplicates need at least {2 * self.duplicates} frames")
            if min(self.width, self.height) < ALBUM_MIN_SIDE:
                raise ValueError(f"album images must be at least {ALBUM_MIN_SIDE}px on each side")
        elif self.duplicates:
            raise ValueError("duplicates only apply to album scenes")
        if self.entity_specs is not None:
            ids = [e.entity_id for e in self.entity_specs if e.entity_id is not None]
            if len(ids) != len(set(ids)):
                raise ValueError("entity ids must be unique")
            labels = {entry.label for entry in self.palette}
            unknown = sorted({e.label for e in self.entity_specs} - labels)
            if unknown:
                raise ValueError(f"entity labels {unknown} are not in the palette")
        return self

    @property
    def entity_count(self) -> int:
        return len(self.entity_specs) if self.entity_specs is not None else self.entities


class Observation(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    entity_id: int
    label: str
    bbox: Box
    depth: float


class EntityInfo(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    entity_id: int
    label: str
    width: int
    height: int
    start: int
    end: int
    accent: Tuple[int, int, int]


def iou(a: Box, b: Box) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union else 0.0


class GroundTruth(BaseModel):
    """What the generator drew, frame by frame."""

    model_config = ConfigDict(extra="forbid")

    video_id: str
    width: int
    height: int
    frames: List[List[Observation]] = []
    entities: List[EntityInfo] = []
    duplicate_pairs: List[Tuple[int, int]] = []

    def distinct_counts(self) -> Dict[str, int]:
        """Entities seen in at least one frame, per label."""
        seen: Dict[int, str] = {}
        for observations in self.frames:
            for obs in observations:
                seen[obs.entity_id] = obs.label
        counts: Dict[str, int] = {}
        for label in seen.values():
            counts[label] = counts.get(label, 0) + 1
        return counts

    def entities_with(self, label: str) -> Set[int]:
        return {obs.entity_id for observations in self.frames for obs in observations if obs.label == label}

    def frames_with(self, label: str) -> List[int]:
        return [n for n, observations in enumerate(self.frames) if any(o.label == label for o in observations)]

    def entity_frames(self, entity_id: int) -> List[int]:
        return [n for n, observations in enumerate(self.frames) if any(o.entity_id == entity_id for o in observations)]

    def attribute(self, frame_no: int, bbox: Box, min_iou: float = 0.5) -> Optional[Observation]:
        """The observation a detection belongs to: same box, else the best IoU at or above ``min_iou``."""
        if not 0 <= frame_no < len(self.frames):
            return None
        best, best_iou = None, min_iou
        for obs in self.frames[frame_no]:
            if tuple(obs.bbox) == tuple(bbox):
                return obs
            overlap = iou(obs.bbox, bbox)
            if overlap >= best_iou:
                best, best_iou = obs, overlap
        return best

    def behind_pairs(self, label: str, margin: float) -> Set[Tuple[int, int, int]]:
        """(frame, behind id, front id) for same-label entities whose x-intervals overlap."""
        pairs = set()
        for frame_no, observations in enumerate(self.frames):
            chosen = [o for o in observations if o.label == label]
            for a, b in itertools.permutations(chosen, 2):
                overlap = a.bbox[0] < b.bbox[2] and b.bbox[0] < a.bbox[2]
                if overlap and a.depth > b.depth + margin:
                    pairs.add((frame_no, a.entity_id, b.entity_id))
        return pairs

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.model_dump_json())

    @classmethod
    def load(cls, path: str) -> GroundTruth:
        with open(path, "r", encoding="utf-8") as handle:
            return cls.model_validate(json.load(handle))


# video scenes

@dataclass(frozen=True)
class _Entity:
    info: EntityInfo
    y: int
    color: Tuple[int, int, int]
    barcode: Tuple[int, int]
    xs: np.ndarray


def accent_colors(palette: List[PaletteEntry]) -> List[Tuple[int, int, int]]:
    """Bin-centre colours far (in L-inf) from every palette colour."""
    out = []
    for color in itertools.product(ACCENT_LEVELS, repeat=3):
        if all(max(abs(c - p) for c, p in zip(color, entry.rgb)) > ACCENT_MIN_DISTANCE for entry in palette):
            out.append(color)
    return out


def _bounce(x0: int, vx: int, span: int, frames: int) -> np.ndarray:
    xs = np.empty(frames, dtype=np.int64)
    x = x0
    for n in range(frames):
        xs[n] = x
        x += vx
        if x < 0:
            x, vx = min(-x, span), -vx
        elif x > span:
            x, vx = max(2 * span - x, 0), -vx
    return xs


def _scripted(spec: SceneSpec, rng: np.random.Generator) -> List[EntitySpec]:
    if spec.entity_specs is not None:
        return list(spec.entity_specs)
    labels = [entry.label for entry in spec.palette]
    return [EntitySpec(label=labels[int(rng.integers(len(labels)))]) for _ in range(spec.entities)]


def _video_entities(spec: SceneSpec, rng: np.random.Generator) -> List[_Entity]:
    scripted = _scripted(spec, rng)
    count = len(scripted)
    taken = {e.entity_id for e in scripted if e.entity_id is not None}
    free = np.setdiff1d(np.arange(0x10000), np.fromiter(taken, dtype=np.int64, count=len(taken)))
    drawn = iter(rng.choice(free, size=count, replace=False).tolist()) if count else iter(())
    colors = {entry.label: entry.rgb for entry in spec.palette}
    accents = accent_colors(spec.palette)
    if not accents:
        raise ConfigurationError("palette leaves no accent colours")
    accent_order = rng.permutation(len(accents))

    sizes = []
    for script in scripted:
        w = script.width or int(rng.integers(spec.rect_width[0], spec.rect_width[1] + 1))
        h = script.height or int(rng.integers(spec.rect_height[0], spec.rect_height[1] + 1))
        if w > spec.width or h > spec.height:
            raise EntityTooLargeError(f"{w}x{h} entity does not fit a {spec.width}x{spec.height} frame")
        sizes.append((w, h))

    lanes = rng.permutation(count)
    needed = sum(h + LANE_GAP for _, h in sizes) + LANE_GAP
    if count and needed > spec.height:
        raise EntityTooLargeError(f"{count} entity lanes need {needed}px, frame is {spec.height}px tall")
    tops = {}
    y = LANE_GAP
    for slot in lanes.tolist():
        tops[slot] = y
        y += sizes[slot][1] + LANE_GAP

    entities = []
    for number, script in enumerate(scripted):
        w, h = sizes[number]
        span = spec.width - w
        x0 = int(rng.integers(0, span + 1))
        speed = int(rng.integers(spec.speed[0], spec.speed[1] + 1)) if span else 0
        vx = speed * (1 if rng.random() < 0.5 else -1)
        accent_w = max(4, w // 3)
        bx = int(rng.integers(1, w - accent_w - GLYPH_W))
        by = int(rng.integers(1, h - GLYPH_H))
        end = spec.frames if script.end is None else min(script.end, spec.frames)
        info = EntityInfo(
            entity_id=script.entity_id if script.entity_id is not None else next(drawn),
            label=script.label,
            width=w,
            height=h,
            start=script.start,
            end=end,
            accent=accents[int(accent_order[number % len(accents)])],
        )
        entities.append(_Entity(info, tops[number], colors[script.label], (bx, by), _bounce(x0, vx, span, spec.frames)))
    return entities


def _noise(spec: SceneSpec, frame_no: int) -> Optional[np.ndarray]:
    if spec.noise_amplitude == 0:
        return None
    seed = [spec.seed & 0xFFFFFFFF, spec.seed >> 32, 1]
    if spec.noise_mode == "temporal":
        seed.append(frame_no)
    rng = np.random.default_rng(seed)
    return rng.integers(0, spec.noise_amplitude + 1, size=(spec.height, spec.width, 3), dtype=np.int16)


def _add_noise(canvas: np.ndarray, noise: Optional[np.ndarray]) -> np.ndarray:
    if noise is None:
        return canvas
    return np.clip(canvas.astype(np.int16) + noise, 0, 255).astype(np.uint8)


def _paint_entity(canvas: np.ndarray, entity: _Entity, x: int) -> None:
    info = entity.info
    w, h = info.width, info.height
    rect = canvas[entity.y:entity.y + h, x:x + w]
    rect[:, :] = entity.color
    bx, by = entity.barcode
    rect[by:by + GLYPH_H, bx:bx + GLYPH_W] = encode_glyph(info.entity_id)
    accent_w = max(4, w // 3)
    rect[1:h - 1, w - 1 - accent_w:w - 1] = info.accent


def _video_truth(spec: SceneSpec, entities: List[_Entity]) -> GroundTruth:
    frames = []
    for n in range(spec.frames):
        observations = []
        for entity in entities:
            info = entity.info
            if not info.start <= n < info.end:
                continue
            x = int(entity.xs[n])
            y2 = entity.y + info.height
            observations.append(
                Observation(
                    entity_id=info.entity_id,
                    label=info.label,
                    bbox=(x, entity.y, x + info.width, y2),
                    depth=1.0 - y2 / spec.height,
                )
            )
        frames.append(observations)
    return GroundTruth(
        video_id=spec.video_id,
        width=spec.width,
        height=spec.height,
        frames=frames,
        entities=[e.info for e in entities],
    )


def _render_video(spec: SceneSpec, entities: List[_Entity], truth: GroundTruth) -> Iterator[Frame]:
    static = _noise(spec, 0) if spec.noise_mode == "static" else None
    by_id = {e.info.entity_id: e for e in entities}
    for n in range(spec.frames):
        canvas = np.zeros((spec.height, spec.width, 3), dtype=np.uint8)
        # far first
        for obs in sorted(truth.frames[n], key=lambda o: -o.depth):
            _paint_entity(canvas, by_id[obs.entity_id], obs.bbox[0])
        noise = static if spec.noise_mode == "static" else _noise(spec, n)
        yield Frame(spec.video_id, n, _add_noise(canvas, noise))


# album scenes

@dataclass(frozen=True)
class _Still:
    background: Tuple[int, int, int]
    rect: Box
    color: Tuple[int, int, int]
    block: Optional[Tuple[int, int, Tuple[int, int, int]]] = None


def _paint_still(spec: SceneSpec, still: _Still) -> np.ndarray:
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    canvas[:, :] = still.background
    x1, y1, x2, y2 = still.rect
    canvas[y1:y2, x1:x2] = still.color
    if still.block is not None:
        bx, by, color = still.block
        canvas[by:by + DUPLICATE_BLOCK, bx:bx + DUPLICATE_BLOCK] = color
    return canvas


def _level_color(rng: np.random.Generator) -> Tuple[int, int, int]:
    return tuple(ALBUM_LEVELS[int(i)] for i in rng.integers(0, len(ALBUM_LEVELS), size=3))


def _random_still(spec: SceneSpec, rng: np.random.Generator) -> _Still:
    w = int(rng.integers(spec.width // 4, spec.width // 2 + 1))
    h = int(rng.integers(spec.height // 4, spec.height // 2 + 1))
    x = int(rng.integers(0, spec.width - w + 1))
    y = int(rng.integers(0, spec.height - h + 1))
    return _Still(_level_color(rng), (x, y, x + w, y + h), _level_color(rng))


def _near_duplicate(spec: SceneSpec, base: _Still, rng: np.random.Generator) -> _Still:
    x1, y1, x2, y2 = base.rect
    shift = int(rng.integers(1, 4))
    if x2 + shift > spec.width:
        shift = -shift
    bx = int(rng.integers(0, spec.width - DUPLICATE_BLOCK + 1))
    by = int(rng.integers(0, spec.height - DUPLICATE_BLOCK + 1))
    return _Still(base.background, (x1 + shift, y1, x2 + shift, y2), base.color, (bx, by, _level_color(rng)))


def _album(spec: SceneSpec, rng: np.random.Generator) -> Tuple[List[_Still], List[Tuple[int, int]]]:
    bases: List[_Still] = []
    hists: List[np.ndarray] = []
    for _ in range(spec.frames - spec.duplicates):
        for _attempt in range(ALBUM_TRIES):
            still = _random_still(spec, rng)
            hist = color_histogram(_paint_still(spec, still), ALBUM_BINS)
            if all(np.linalg.norm(hist - other) > DISTINCT_MIN_DISTANCE for other in hists):
                break
        else:
            raise ConfigurationError(f"could not draw {spec.frames - spec.duplicates} distinct album images")
        bases.append(still)
        hists.append(hist)

    originals = rng.choice(len(bases), size=spec.duplicates, replace=False).tolist() if spec.duplicates else []
    stills = bases + [_near_duplicate(spec, bases[i], rng) for i in originals]
    order = rng.permutation(len(stills))
    position = {int(source): slot for slot, source in enumerate(order.tolist())}
    pairs = []
    for k, base in enumerate(originals):
        a, b = position[base], position[len(bases) + k]
        pairs.append((min(a, b), max(a, b)))
    return [stills[int(i)] for i in order], sorted(pairs)


def _render_album(spec: SceneSpec, stills: List[_Still]) -> Iterator[Frame]:
    static = _noise(spec, 0) if spec.noise_mode == "static" else None
    for n, still in enumerate(stills):
        noise = static if spec.noise_mode == "static" else _noise(spec, n)
        yield Frame(spec.video_id, n, _add_noise(_paint_still(spec, still), noise))


def gen_scene(spec: SceneSpec) -> Tuple[Iterator[Frame], GroundTruth]:
    """
    Frames (rendered lazily) and the ground truth of a seeded scene.

    The same spec always yields bit-identical frames. Raises
    EntityTooLargeError when an entity or the stack of lanes does not fit.
    """
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, spec.seed >> 32])
    if spec.kind == "album":
        stills, pairs = _album(spec, rng)
        truth = GroundTruth(
            video_id=spec.video_id,
            width=spec.width,
            height=spec.height,
            frames=[[] for _ in stills],
            duplicate_pairs=pairs,
        )
        logger.debug("Generated album", seed=spec.seed, images=len(stills), duplicates=len(pairs))
        return _render_album(spec, stills), truth

    entities = _video_entities(spec, rng)
    truth = _video_truth(spec, entities)
    logger.debug("Generated scene", seed=spec.seed, frames=spec.frames, entities=len(entities))
    return _render_video(spec, entities, truth), truth


def pedestrian_scene(seed: int, frames: int = 200, pedestrians: int = 12, **overrides) -> SceneSpec:
    """Many short-lived pedestrians plus one vehicle crossing the whole clip."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 4])
    scripted = [EntitySpec(label="vehicle")]
    life = max(2, frames // 10)
    for _ in range(pedestrians):
        start = int(rng.integers(0, max(1, frames - life)))
        scripted.append(EntitySpec(label="pedestrian", start=start, end=start + life))
    params = dict(seed=seed, frames=frames, rect_height=(12, 14), entity_specs=scripted)
    params.update(overrides)
    return SceneSpec(**params)
