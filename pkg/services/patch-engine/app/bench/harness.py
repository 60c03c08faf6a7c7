"""
Benchmark runner: every selected (query, variant) over every physical
design (layout x quality x seed), one CSV row each.
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from shared.config.settings import BaseConfig

from ..storage.video_store import Layout
from .queries import QUERY_VARIANTS, Quality, SceneSettings, Workload, run_query

logger = structlog.get_logger(__name__)

CSV_COLUMNS = (
    "query",
    "variant",
    "layout",
    "codec",
    "quality",
    "seed",
    "etl_ms",
    "query_ms",
    "storage_bytes",
    "records_read",
    "frames_decoded",
    "index_probes",
    "result_count",
    "precision",
    "recall",
)
TIMING_COLUMNS = ("etl_ms", "query_ms")


class BenchConfig(BaseModel):
    """What to run; unknown keys, queries or variants are rejected up front."""

    model_config = ConfigDict(extra="forbid")

    queries: List[str] = Field(default_factory=lambda: list(QUERY_VARIANTS))
    variants: Dict[str, List[str]] = {}
    layouts: List[Layout] = [Layout.FRAME_FILE]
    qualities: List[Quality] = ["lossless"]
    seeds: List[int] = Field(default=[7], min_length=1)
    scene: SceneSettings = SceneSettings()
    label_noise_p: float = Field(default=0.0, ge=0.0, le=1.0)
    target: Optional[int] = Field(default=None, ge=0, le=0xFFFF)
    workdir: Optional[str] = None

    @model_validator(mode="after")
    def _known(self) -> BenchConfig:
        unknown = [q for q in list(self.queries) + list(self.variants) if q not in QUERY_VARIANTS]
        if unknown:
            raise ValueError(f"unknown queries {sorted(set(unknown))} (choose from {', '.join(QUERY_VARIANTS)})")
        for query, names in self.variants.items():
            bad = [v for v in names if v not in QUERY_VARIANTS[query]]
            if bad:
                raise ValueError(f"{query} has no variants {bad} (choose from {', '.join(QUERY_VARIANTS[query])})")
        return self

    def variants_of(self, query: str) -> List[str]:
        return list(self.variants.get(query, QUERY_VARIANTS[query]))

    def combinations(self) -> List[Tuple[str, str, Layout, str, int]]:
        return [
            (query, variant, layout, quality, seed)
            for seed in self.seeds
            for layout in self.layouts
            for quality in self.qualities
            for query in self.queries
            for variant in self.variants_of(query)
        ]


@dataclass
class BenchRow:
    query: str
    variant: str
    layout: str
    codec: str
    quality: str
    seed: int
    etl_ms: float
    query_ms: float
    storage_bytes: int
    records_read: int
    frames_decoded: int
    index_probes: int
    result_count: int
    precision: float
    recall: float
    expected_count: int = 0
    total_ms: float = 0.0

    def csv_row(self) -> Dict[str, Any]:
        row = asdict(self)
        return {column: row[column] for column in CSV_COLUMNS}


@dataclass
class BenchReport:
    rows: List[BenchRow]
    provenance: Dict[str, Any]

    def to_csv(self, with_timings: bool = True) -> str:
        columns = [c for c in CSV_COLUMNS if with_timings or c not in TIMING_COLUMNS]
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(row.csv_row() for row in self.rows)
        return buffer.getvalue()

    def write_csv(self, path: str) -> None:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(self.to_csv())

    def render_text(self) -> str:
        lines = ["# provenance"]
        lines += [f"{key}={value}" for key, value in sorted(self.provenance.items())]
        lines.append("# results")
        header = f"{'query':<6}{'variant':<22}{'layout':<16}{'quality':<10}{'seed':>6}"
        header += f"{'etl_ms':>12}{'query_ms':>12}{'results':>9}{'expected':>10}{'precision':>10}{'recall':>8}"
        lines.append(header)
        for r in self.rows:
            lines.append(
                f"{r.query:<6}{r.variant:<22}{r.layout:<16}{r.quality:<10}{r.seed:>6}"
                f"{r.etl_ms:>12.3f}{r.query_ms:>12.3f}{r.result_count:>9}{r.expected_count:>10}"
                f"{r.precision:>10.4f}{r.recall:>8.4f}"
            )
        return "\n".join(lines)


def provenance(config: BenchConfig, engine: BaseConfig) -> Dict[str, Any]:
    """Every default and setting in force, flattened to ``section.key``."""
    out: Dict[str, Any] = {f"engine.{k}": v for k, v in engine.engine_defaults().items()}
    for key, value in config.model_dump(mode="json", exclude={"workdir"}).items():
        out[f"bench.{key}"] = value
    return out


def run_benchmark(config: BenchConfig, engine: Optional[BaseConfig] = None) -> BenchReport:
    """Run the configured combinations sequentially and score them against ground truth."""
    engine = engine or BaseConfig()
    workdir = config.workdir or os.path.join(engine.data_dir, "bench")
    rows: List[BenchRow] = []
    designs: Dict[Tuple[Layout, str, int], Workload] = {}
    started = time.perf_counter()
    for query, variant, layout, quality, seed in config.combinations():
        design = (layout, quality, seed)
        if design not in designs:
            designs[design] = Workload(
                workdir,
                engine,
                layout=layout,
                quality=quality,
                seed=seed,
                scene=config.scene,
                label_noise_p=config.label_noise_p,
                target=config.target,
            )
        work = designs[design]
        begun = time.perf_counter()
        outcome = run_query(work, query, variant)
        rows.append(
            BenchRow(
                query=query,
                variant=variant,
                layout=layout.value,
                codec=work.codec.mode.value,
                quality=quality,
                seed=seed,
                etl_ms=round(outcome.etl_ms, 3),
                query_ms=round(outcome.query_ms, 3),
                storage_bytes=outcome.storage_bytes,
                records_read=outcome.records_read,
                frames_decoded=outcome.frames_decoded,
                index_probes=outcome.index_probes,
                result_count=outcome.result_count,
                precision=round(outcome.precision, 4),
                recall=round(outcome.recall, 4),
                expected_count=outcome.expected_count,
                total_ms=round((time.perf_counter() - begun) * 1000, 3),
            )
        )
    logger.info(
        "Benchmark finished",
        rows=len(rows),
        designs=len(designs),
        elapsed_ms=round((time.perf_counter() - started) * 1000, 3),
    )
    return BenchReport(rows, provenance(config, engine))
