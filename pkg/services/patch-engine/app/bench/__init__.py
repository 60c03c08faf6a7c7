"""Synthetic scenes with ground truth, benchmark workloads and the measurement harness."""

from .experiments import EXPERIMENTS, run_experiment, write_rows
from .harness import CSV_COLUMNS, BenchConfig, BenchReport, BenchRow, run_benchmark
from .queries import QUERIES, QUERY_VARIANTS, QueryOutcome, SceneSettings, Workload, run_query
from .scene import (
    DEFAULT_PALETTE,
    EntitySpec,
    GroundTruth,
    Observation,
    SceneSpec,
    default_palette,
    gen_scene,
    lossy_palette,
    pedestrian_scene,
)
from .scoring import observe, precision_recall

__all__ = [
    "CSV_COLUMNS",
    "DEFAULT_PALETTE",
    "EXPERIMENTS",
    "QUERIES",
    "QUERY_VARIANTS",
    "BenchConfig",
    "BenchReport",
    "BenchRow",
    "EntitySpec",
    "GroundTruth",
    "Observation",
    "QueryOutcome",
    "SceneSettings",
    "SceneSpec",
    "Workload",
    "default_palette",
    "gen_scene",
    "lossy_palette",
    "observe",
    "pedestrian_scene",
    "precision_recall",
    "run_benchmark",
    "run_experiment",
    "run_query",
    "write_rows",
]
