"""Per-run artifact directories.

Layout::

    config.json          echoed configuration (versioned schema)
    measurements.jsonl   every acquisition step, warm-up included
    trajectory.csv       beta, thresholds and tracked losses per confidence step
    metrics.csv          one summary row
    truth.f32, prediction.f32 (+ .json sidecars)

Nothing time-dependent is written, so identical configs give identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .. import __version__
from .config import RunConfig, config_from_dict
from .io import read_csv, read_measurements, write_csv, write_image, write_measurements
from .runner import RunResult

CONFIG = "config.json"
MEASUREMENTS = "measurements.jsonl"
TRAJECTORY = "trajectory.csv"
METRICS = "metrics.csv"


def write_config_echo(cfg: RunConfig, path) -> None:
    echo = {"package_version": __version__, "config": cfg.to_dict()}
    Path(path).write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")


def read_config_echo(path) -> RunConfig:
    data = json.loads(Path(path).read_text())
    return config_from_dict(data["config"] if "config" in data else data)


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    write_config_echo(cfg, out / CONFIG)
    write_measurements(out / MEASUREMENTS, result.steps)
    write_csv(out / TRAJECTORY, result.trajectory_rows())
    write_csv(out / METRICS, [result.metrics_row()])
    meta = {"family": cfg.family, "phantom": cfg.phantom, "side": cfg.side}
    write_image(out / "truth.f32", result.truth, kind="truth", **meta)
    write_image(out / "prediction.f32", result.prediction, kind="prediction",
                predictor=cfg.predictor, **meta)
    return out


def load_run_inputs(run_dir) -> tuple[RunConfig, list]:
    """Config and measurement log of a stored run (everything replay needs)."""
    d = Path(run_dir)
    return read_config_echo(d / CONFIG), read_measurements(d / MEASUREMENTS)


def load_trajectory(run_dir) -> list[dict]:
    return read_csv(Path(run_dir) / TRAJECTORY)


def load_metrics(run_dir) -> dict:
    rows = read_csv(Path(run_dir) / METRICS)
    return rows[0]
