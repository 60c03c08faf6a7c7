"""
Patch Engine command line.

Subcommands cover the whole workflow: render a synthetic scene, ingest
frames into a storage layout, run ETL pipelines and build indexes from a
plan file, execute a plan, run the benchmark harness and the extra
experiments, and report on stores and collections.

Exit codes: 0 on success, 1 on a validation or configuration error, 2 on
a runtime error.
"""

import argparse
import glob
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
from pydantic import ValidationError

# Add monorepo root to path so the shared modules resolve
root_path = Path(__file__).resolve().parent.parent.parent.parent
if str(root_path) not in sys.path:
    sys.path.append(str(root_path))

from shared.config.settings import BaseConfig, get_config  # noqa: E402
from shared.logging.config import setup_service_logging  # noqa: E402
from shared.store.record_store import RecordStoreError  # noqa: E402

from app.bench.experiments import EXPERIMENTS, run_experiment, write_rows  # noqa: E402
from app.bench.harness import BenchConfig, run_benchmark  # noqa: E402
from app.bench.queries import codec_for  # noqa: E402
from app.bench.scene import SceneSpec, default_palette, gen_scene, lossy_palette  # noqa: E402
from app.core.patch import Frame  # noqa: E402
from app.errors import ConfigurationError, PatchEngineError, PlanValidationError  # noqa: E402
from app.etl.collection import open_collection  # noqa: E402
from app.index.persist import list_indexes, save_index  # noqa: E402
from app.plan_file import build_index, index_name, load_plan_file, run_pipelines, write_results  # noqa: E402
from app.query.executor import ExecOptions, execute  # noqa: E402
from app.query.operators import IndexKindName  # noqa: E402
from app.storage.video_store import Layout, StoreDescriptor, ingest, open_store  # noqa: E402

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

QUALITIES = ("lossless", "high", "medium", "low")

# flag -> (config field, type)
ENGINE_FLAGS = {
    "--sim-tau": ("sim_tau", float),
    "--dedup-tau": ("dedup_tau", float),
    "--histogram-bins": ("histogram_bins", int),
    "--clip-len": ("clip_len", int),
    "--leaf-size": ("leaf_size", int),
    "--rtree-capacity": ("rtree_capacity", int),
    "--rtree-min-fill": ("rtree_min_fill", float),
    "--quant-high": ("quant_high", int),
    "--quant-medium": ("quant_medium", int),
    "--quant-low": ("quant_low", int),
    "--color-tolerance": ("color_tolerance", int),
    "--min-area": ("min_area", int),
    "--depth-margin": ("depth_margin", float),
    "--noise-amplitude": ("noise_amplitude", int),
    "--probe-batch": ("probe_batch", int),
}


def _scene_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kind", choices=("video", "album"), default="video")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--frames", type=int, default=100)
    parser.add_argument("--width", type=int, default=320)
    parser.add_argument("--height", type=int, default=240)
    parser.add_argument("--entities", type=int, default=5)
    parser.add_argument("--duplicates", type=int, default=0)
    parser.add_argument("--noise-mode", choices=("static", "temporal"), default="static")
    parser.add_argument("--palette", choices=("default", "lossy"), default="default")


def _storage_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="store path")
    parser.add_argument("--layout", choices=[layout.value for layout in Layout], default=Layout.FRAME_FILE.value)
    parser.add_argument("--quality", choices=QUALITIES, default="lossless")
    parser.add_argument("--video-id", default="video")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patch-engine", description="Visual data management engine")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--environment", choices=("development", "production"), default=None)
    parser.add_argument("--data-dir", default=None)
    for flag, (field, kind) in ENGINE_FLAGS.items():
        parser.add_argument(flag, dest=field, type=kind, default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-scene", help="render a synthetic scene into a store plus ground truth")
    _scene_arguments(gen)
    _storage_arguments(gen)
    gen.add_argument("--truth", default=None, help="ground-truth JSON path (default: <out>.truth.json)")

    ing = commands.add_parser("ingest", help="store raw frames (a directory of .npy arrays) or a scene")
    source = ing.add_mutually_exclusive_group(required=True)
    source.add_argument("--frames-dir", default=None)
    source.add_argument("--scene", action="store_true", help="ingest a scene rendered from the scene flags")
    _scene_arguments(ing)
    _storage_arguments(ing)

    etl = commands.add_parser("etl", help="run the pipelines and index builds of a plan file")
    etl.add_argument("plan")

    idx = commands.add_parser("index", help="build and persist an index over a collection")
    idx.add_argument("--collection", required=True)
    idx.add_argument("--kind", choices=[kind.value for kind in IndexKindName], required=True)
    idx.add_argument("--key", default=None)
    idx.add_argument("--name", default=None)

    query = commands.add_parser("query", help="execute the plan of a plan file")
    query.add_argument("plan")
    query.add_argument("--results", default=None, help="CSV of result tuples")
    query.add_argument("--stats", default=None, help="execution statistics (key=value lines)")

    bench = commands.add_parser("bench", help="run the benchmark harness")
    bench.add_argument("--config", default=None, help="benchmark config JSON")
    bench.add_argument("--out", default=None, help="report CSV path")
    bench.add_argument("--text", default=None, help="text report path")

    stats = commands.add_parser("stats", help="sizes and counts of a store or collection")
    stats.add_argument("path")

    exp = commands.add_parser("experiment", help="run one of the extra experiments")
    exp.add_argument("name", choices=sorted(EXPERIMENTS))
    exp.add_argument("--out", required=True, help="CSV path")
    exp.add_argument("--seed", type=int, default=7)
    exp.add_argument("--workdir", default=None)
    return parser


def load_config(args: argparse.Namespace) -> BaseConfig:
    overrides: Dict[str, Any] = {
        field: getattr(args, field) for field, _ in ENGINE_FLAGS.values() if getattr(args, field) is not None
    }
    for field in ("log_level", "environment", "data_dir"):
        if getattr(args, field) is not None:
            overrides[field] = getattr(args, field)
    return get_config(**overrides)


def _scene_spec(args: argparse.Namespace, config: BaseConfig) -> SceneSpec:
    return SceneSpec(
        kind=args.kind,
        seed=args.seed,
        frames=args.frames,
        width=args.width,
        height=args.height,
        entities=args.entities,
        duplicates=args.duplicates,
        noise_mode=args.noise_mode,
        noise_amplitude=config.noise_amplitude,
        palette=lossy_palette() if args.palette == "lossy" else default_palette(),
        video_id=args.video_id,
    )


def _descriptor(args: argparse.Namespace, config: BaseConfig) -> StoreDescriptor:
    return StoreDescriptor(
        layout=Layout(args.layout),
        path=args.out,
        codec=codec_for(args.quality, config),
        clip_len=config.clip_len,
        video_id=args.video_id,
    )


def _print(lines: Dict[str, Any]) -> None:
    for key, value in lines.items():
        print(f"{key}={value}")


def cmd_gen_scene(args: argparse.Namespace, config: BaseConfig) -> int:
    frames, truth = gen_scene(_scene_spec(args, config))
    store = ingest(frames, _descriptor(args, config))
    truth_path = args.truth or f"{args.out}.truth.json"
    truth.save(truth_path)
    _print({"store": args.out, "truth": truth_path, "frames": store.frame_count, "checksum": store.checksum()})
    return EXIT_OK


def _frames_from_dir(directory: str, video_id: str) -> Iterator[Frame]:
    paths = sorted(glob.glob(os.path.join(directory, "*.npy")))
    if not paths:
        raise ConfigurationError(f"no .npy frames in {directory}")
    for number, path in enumerate(paths):
        yield Frame(video_id, number, np.load(path))


def cmd_ingest(args: argparse.Namespace, config: BaseConfig) -> int:
    if args.frames_dir is not None:
        frames = _frames_from_dir(args.frames_dir, args.video_id)
    else:
        frames, _ = gen_scene(_scene_spec(args, config))
    store = ingest(frames, _descriptor(args, config))
    _print({"store": args.out, "frames": store.frame_count, "size_bytes": store.size_bytes()})
    return EXIT_OK


def cmd_etl(args: argparse.Namespace, config: BaseConfig) -> int:
    plan_file = load_plan_file(args.plan)
    for collection in run_pipelines(plan_file, config):
        _print({"collection": collection.path, "patches": len(collection)})
    return EXIT_OK


def cmd_index(args: argparse.Namespace, config: BaseConfig) -> int:
    collection = open_collection(args.collection)
    name = args.name or index_name(args.kind, args.key)
    size = save_index(collection, name, build_index(collection, args.kind, args.key, config))
    _print({"collection": collection.path, "index": name, "size_bytes": size})
    return EXIT_OK


def cmd_query(args: argparse.Namespace, config: BaseConfig) -> int:
    plan_file = load_plan_file(args.plan)
    violations = plan_file.pipeline_violations()
    if violations:
        raise PlanValidationError(violations)
    if plan_file.plan is None:
        raise ConfigurationError(f"{args.plan} has no plan")
    execution = execute(plan_file.plan, ExecOptions.from_config(config))
    rows = execution.drain()
    stats = execution.stats

    results_path = args.results or plan_file.output.results
    if results_path:
        write_results(rows, results_path)
    stats_path = args.stats or plan_file.output.stats
    if stats_path:
        Path(stats_path).parent.mkdir(parents=True, exist_ok=True)
        Path(stats_path).write_text(stats.render() + "\n", encoding="utf-8")
    else:
        print(stats.render())
    if plan_file.output.stats_csv:
        Path(plan_file.output.stats_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(plan_file.output.stats_csv).write_text(stats.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: BaseConfig) -> int:
    raw: Dict[str, Any] = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as handle:
            try:
                raw = json.load(handle)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{args.config} is not valid JSON: {e}") from e
    bench_config = BenchConfig.model_validate(raw)
    report = run_benchmark(bench_config, config)
    out = args.out or os.path.join(config.data_dir, "bench", "report.csv")
    report.write_csv(out)
    text = report.render_text()
    if args.text:
        Path(args.text).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, config: BaseConfig) -> int:
    if not os.path.exists(args.path):
        raise ConfigurationError(f"{args.path} does not exist")
    try:
        store = open_store(args.path)
    except RecordStoreError:
        collection = open_collection(args.path)
        info = collection.describe()
        info["indexes"] = ",".join(list_indexes(collection))
        _print(info)
        return EXIT_OK
    _print(
        {
            "store": args.path,
            "video_id": store.video_id,
            "layout": store.layout.value,
            "codec": store.descriptor.codec.describe(),
            "frames": store.frame_count,
            "width": store.width,
            "height": store.height,
            "size_bytes": store.size_bytes(),
            "checksum": store.checksum(),
        }
    )
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, config: BaseConfig) -> int:
    workdir = args.workdir or os.path.join(config.data_dir, "experiments")
    rows = run_experiment(args.name, config, workdir, seed=args.seed)
    write_rows(rows, args.out)
    _print({"experiment": args.name, "rows": len(rows), "csv": args.out})
    return EXIT_OK


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "ingest": cmd_ingest,
    "etl": cmd_etl,
    "index": cmd_index,
    "query": cmd_query,
    "bench": cmd_bench,
    "stats": cmd_stats,
    "experiment": cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
    except ValidationError as e:
        print(f"error: invalid settings: {e}", file=sys.stderr)
        return EXIT_INVALID
    logger = setup_service_logging(config.service_name, config.environment, config.log_level, config.log_file)
    logger.debug("Running %s", args.command)

    try:
        return COMMANDS[args.command](args, config)
    except PlanValidationError as e:
        print("error: validation failed", file=sys.stderr)
        for violation in e.violations:
            print(f"  {violation}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigurationError, ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (PatchEngineError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
