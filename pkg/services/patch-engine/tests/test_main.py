"""
Tests for the command line: the gen-scene, etl, query and stats
workflow and the exit codes.
"""

import csv
import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add service root to path
sys.path.append(str(Path(__file__).parent.parent))

from app.main import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main

PALETTE = [
    {"r": 240, "g": 16, "b": 16, "label": "vehicle"},
    {"r": 16, "g": 240, "b": 16, "label": "pedestrian"},
    {"r": 16, "g": 16, "b": 240, "label": "cyclist"},
]


def _output(capsys) -> dict:
    out = capsys.readouterr().out
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line)


def _write(path: Path, document: dict) -> str:
    path.write_text(json.dumps(document), encoding="utf-8")
    return str(path)


@pytest.fixture
def scene(tmp_path, capsys):
    store = str(tmp_path / "traffic.db")
    code = main(
        ["gen-scene", "--seed", "3", "--frames", "6", "--width", "160", "--height", "120",
         "--entities", "3", "--out", store, "--video-id", "traffic"]
    )
    assert code == EXIT_OK
    printed = _output(capsys)
    assert printed["frames"] == "6"
    return store


def test_gen_scene_writes_store_and_truth(scene, capsys):
    assert Path(f"{scene}.truth.json").exists()
    assert main(["stats", scene]) == EXIT_OK
    printed = _output(capsys)
    assert printed["video_id"] == "traffic"
    assert printed["layout"] == "frame_file"
    assert printed["frames"] == "6"


def test_etl_then_query(scene, tmp_path, capsys):
    patches = str(tmp_path / "blobs.patches")
    results = tmp_path / "out" / "results.csv"
    plan = _write(
        tmp_path / "plan.json",
        {
            "pipelines": [
                {
                    "store": scene,
                    "output": patches,
                    "stages": [
                        {"stage": "generator", "kind": "blob_detector", "palette": PALETTE},
                        {"stage": "index", "kind": "hash", "key": "label"},
                    ],
                }
            ],
            "plan": {
                "node": "count_by",
                "key": "frameno",
                "child": {"node": "index_scan", "collection": patches, "index": "label_hash", "value": "vehicle"},
            },
            "output": {"results": str(results)},
        },
    )

    assert main(["etl", plan]) == EXIT_OK
    assert _output(capsys)["collection"] == patches

    assert main(["stats", patches]) == EXIT_OK
    printed = _output(capsys)
    assert printed["indexes"] == "label_hash"

    assert main(["query", plan]) == EXIT_OK
    printed = _output(capsys)
    assert "result.tuples" in printed
    with open(results, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == int(printed["result.tuples"])
    assert all(row["video_id"] == "traffic" for row in rows)


def test_index_command(scene, tmp_path, capsys):
    patches = str(tmp_path / "blobs.patches")
    plan = _write(
        tmp_path / "plan.json",
        {
            "pipelines": [
                {
                    "store": scene,
                    "output": patches,
                    "stages": [{"stage": "generator", "kind": "blob_detector", "palette": PALETTE}],
                }
            ]
        },
    )
    assert main(["etl", plan]) == EXIT_OK
    capsys.readouterr()

    assert main(["index", "--collection", patches, "--kind", "rtree"]) == EXIT_OK
    assert _output(capsys)["index"] == "rtree"
    assert main(["index", "--collection", patches, "--kind", "hash"]) == EXIT_INVALID


def test_invalid_pipeline_exits_with_violations(scene, tmp_path, capsys):
    plan = _write(
        tmp_path / "plan.json",
        {
            "pipelines": [
                {
                    "store": scene,
                    "output": str(tmp_path / "bad.patches"),
                    "stages": [{"stage": "transformer", "kind": "color_histogram"}],
                }
            ]
        },
    )
    assert main(["etl", plan]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "error: validation failed" in err
    assert "pipelines[0]" in err
    assert not (tmp_path / "bad.patches").exists()


def test_query_on_missing_collection_is_a_violation(tmp_path, capsys):
    plan = _write(tmp_path / "plan.json", {"plan": {"node": "scan", "collection": str(tmp_path / "none.patches")}})
    assert main(["query", plan]) == EXIT_INVALID
    assert "cannot open collection" in capsys.readouterr().err


def test_plan_file_errors(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["query", str(broken)]) == EXIT_INVALID

    unknown = _write(tmp_path / "unknown.json", {"plan": {"node": "teleport"}})
    assert main(["query", unknown]) == EXIT_INVALID

    empty = _write(tmp_path / "empty.json", {})
    assert main(["query", empty]) == EXIT_INVALID


def test_etl_on_missing_store_is_a_runtime_error(tmp_path, capsys):
    plan = _write(
        tmp_path / "plan.json",
        {
            "pipelines": [
                {
                    "store": str(tmp_path / "absent.db"),
                    "output": str(tmp_path / "out.patches"),
                    "stages": [{"stage": "generator", "kind": "whole_image"}],
                }
            ]
        },
    )
    assert main(["etl", plan]) == EXIT_RUNTIME
    assert "error: " in capsys.readouterr().err


def test_stats_on_missing_path(tmp_path):
    assert main(["stats", str(tmp_path / "nothing.db")]) == EXIT_INVALID


def test_invalid_engine_setting(tmp_path):
    assert main(["--sim-tau", "-1", "stats", str(tmp_path)]) == EXIT_INVALID


def test_ingest_frames_dir(tmp_path, capsys):
    frames = tmp_path / "frames"
    frames.mkdir()
    for number in range(3):
        np.save(frames / f"{number:04d}.npy", np.full((8, 10, 3), number * 40, dtype=np.uint8))
    store = str(tmp_path / "raw.db")

    code = main(["ingest", "--frames-dir", str(frames), "--out", store, "--layout", "segmented_file"])
    assert code == EXIT_OK
    assert _output(capsys)["frames"] == "3"
