"""Aggregate per-run records into per-figure tables (mean and standard error)."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..metrics import DEFAULT_DELTAS, binomial_rate, calibration_curve
from .artifacts import METRICS, TRAJECTORY
from .io import read_csv, read_image, write_csv, write_greyscale

TABLE_COLUMNS = {
    "tightness": ("intensity", "method", "mean_gap", "sem", "n"),
    "psnr": ("intensity", "method", "mean_psnr", "sem", "n"),
    "rates": ("intensity", "method", "crossover_rate", "sem", "n"),
    "exclusion": ("intensity", "method", "rotation", "exclusion_rate", "sem", "n"),
    "calibration": ("intensity", "method", "delta", "crossover_rate", "sem", "n"),
    "gap_curve": ("intensity", "method", "step", "mean_gap", "sem", "n"),
    "mixing_vs_mean": ("intensity", "method", "mean_difference", "sem", "n"),
    "hallucination": ("intensity", "method", "mean_flag_rate", "sem", "n"),
    "interval_quality": ("intensity", "method", "mean_coverage", "coverage_sem", "mean_width",
                         "width_sem", "mean_ause", "n"),
}


def mean_sem(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    sem = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem


@dataclass
class RunRecord:
    """What aggregation needs from one run: its metrics row and stored trajectory."""

    metrics: dict
    trajectory: list = field(default_factory=list)

    @property
    def key(self) -> tuple:
        return (self.metrics["intensity"], self.metrics["method"])

    @classmethod
    def from_result(cls, result) -> "RunRecord":
        return cls(result.metrics_row(), result.trajectory_rows())


def _grouped(records: Iterable[RunRecord]):
    groups = defaultdict(list)
    for r in records:
        groups[r.key].append(r)
    return sorted(groups.items(), key=lambda kv: (float(kv[0][0]), str(kv[0][1])))


def tightness_table(records) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        m, s = mean_sem([r.metrics["final_gap"] for r in rs])
        rows.append({"intensity": intensity, "method": method, "mean_gap": m, "sem": s, "n": len(rs)})
    return rows


def psnr_table(records) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        m, s = mean_sem([r.metrics["psnr"] for r in rs if math.isfinite(r.metrics["psnr"])])
        rows.append({"intensity": intensity, "method": method, "mean_psnr": m, "sem": s, "n": len(rs)})
    return rows


def rates_table(records) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        rate = binomial_rate([bool(r.metrics["crossover"]) for r in rs])
        rows.append({"intensity": intensity, "method": method, "crossover_rate": rate.value,
                     "sem": rate.sem, "n": rate.n})
    return rows


def exclusion_table(records) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        cols = sorted({c for r in rs for c in r.metrics if c.startswith("excluded_rot")},
                      key=lambda c: float(c[len("excluded_rot"):]))
        # rotation 0 is the truth itself: excluded iff its final gap is negative
        final0 = [float(r.trajectory[-1]["gap_truth"]) < 0 for r in rs if r.trajectory]
        if final0:
            rate = binomial_rate(final0)
            rows.append({"intensity": intensity, "method": method, "rotation": 0.0,
                         "exclusion_rate": rate.value, "sem": rate.sem, "n": rate.n})
        for c in cols:
            rate = binomial_rate([bool(r.metrics[c]) for r in rs if r.metrics.get(c) is not None])
            rows.append({"intensity": intensity, "method": method, "rotation": float(c[len("excluded_rot"):]),
                         "exclusion_rate": rate.value, "sem": rate.sem, "n": rate.n})
    return rows


def _trajectory(record: RunRecord) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([float(row["beta"]) for row in record.trajectory]),
            np.array([float(row["L_truth"]) for row in record.trajectory]))


def calibration_table(records, deltas: Sequence[float] = DEFAULT_DELTAS) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        trajectories = [_trajectory(r) for r in rs if r.trajectory]
        if not trajectories:
            continue
        for delta, rate in calibration_curve(trajectories, deltas):
            rows.append({"intensity": intensity, "method": method, "delta": delta,
                         "crossover_rate": rate.value, "sem": rate.sem, "n": rate.n})
    return rows


def gap_curve_table(records) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        curves = [r.trajectory for r in rs if r.trajectory]
        if not curves:
            continue
        for i in range(min(len(c) for c in curves)):
            m, s = mean_sem([float(c[i]["beta"]) - float(c[i]["L_truth"]) for c in curves])
            rows.append({"intensity": intensity, "method": method, "step": int(curves[0][i]["step"]),
                         "mean_gap": m, "sem": s, "n": len(curves)})
    return rows


def mixing_vs_mean_table(records) -> list[dict]:
    """Paired ``beta_final(mean) - beta_final(mixture)`` for each ``X`` / ``X_mean`` pair."""
    by_cell = {}
    for r in records:
        m = r.metrics
        by_cell[(m["intensity"], m["method"], m["family"], m["phantom"], m["seed"])] = m["final_beta"]
    diffs = defaultdict(list)
    for (intensity, method, fam, ph, seed), beta in by_cell.items():
        mean_beta = by_cell.get((intensity, f"{method}_mean", fam, ph, seed))
        if mean_beta is not None:
            diffs[(intensity, method)].append(mean_beta - beta)
    rows = []
    for (intensity, method), d in sorted(diffs.items(), key=lambda kv: (float(kv[0][0]), kv[0][1])):
        m, s = mean_sem(d)
        rows.append({"intensity": intensity, "method": method, "mean_difference": m, "sem": s, "n": len(d)})
    return rows


def hallucination_table(records) -> list[dict]:
    rows = []
    for (intensity, method), rs in _grouped(records):
        vals = [r.metrics.get("sample_flag_rate") for r in rs]
        vals = [v for v in vals if v is not None]
        if vals:
            m, s = mean_sem(vals)
            rows.append({"intensity": intensity, "method": method, "mean_flag_rate": m, "sem": s,
                         "n": len(vals)})
    return rows


def interval_quality_table(interval_rows) -> list[dict]:
    groups = defaultdict(list)
    for row in interval_rows:
        groups[(row["intensity"], row["method"])].append(row)
    out = []
    for (intensity, method), rs in sorted(groups.items(), key=lambda kv: (float(kv[0][0]), kv[0][1])):
        cov, cov_sem = mean_sem([r["coverage"] for r in rs])
        width, width_sem = mean_sem([r["mean_width"] for r in rs])
        a, _ = mean_sem([r["ause"] for r in rs])
        out.append({"intensity": intensity, "method": method, "mean_coverage": cov,
                    "coverage_sem": cov_sem, "mean_width": width, "width_sem": width_sem,
                    "mean_ause": a, "n": len(rs)})
    return out


def build_tables(records: Sequence[RunRecord], interval_rows: Sequence[dict] = ()) -> dict[str, list]:
    tables = {
        "tightness": tightness_table(records),
        "psnr": psnr_table(records),
        "rates": rates_table(records),
        "exclusion": exclusion_table(records),
        "calibration": calibration_table(records),
        "gap_curve": gap_curve_table(records),
        "mixing_vs_mean": mixing_vs_mean_table(records),
        "hallucination": hallucination_table(records),
    }
    if interval_rows:
        tables["interval_quality"] = interval_quality_table(interval_rows)
    return tables


def write_tables(tables: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows in tables.items():
        path = out / f"{name}.csv"
        write_csv(path, rows, TABLE_COLUMNS[name])
        paths.append(path)
    return paths


def load_records(run_dirs: Iterable) -> tuple[list[RunRecord], list[str]]:
    """Read every run directory; directories missing artifacts are listed, not fatal."""
    records, missing = [], []
    for d in run_dirs:
        d = Path(d)
        try:
            metrics = read_csv(d / METRICS)[0]
            trajectory = read_csv(d / TRAJECTORY)
        except (FileNotFoundError, IndexError):
            missing.append(str(d))
            continue
        records.append(RunRecord(metrics, trajectory))
    return records, missing


def load_interval_rows(run_dirs: Iterable) -> list[dict]:
    rows = []
    for d in run_dirs:
        path = Path(d) / "intervals" / "intervals.csv"
        if path.exists():
            rows.extend(read_csv(path))
    return rows


def render_maps(run_dirs: Iterable, white: float = 0.5) -> list[str]:
    """8-bit renders of every stored half-width / error map that lacks one."""
    written = []
    for d in run_dirs:
        for raw in sorted(Path(d).glob("intervals/*.f32")):
            if raw.stem.endswith("halfwidth") or raw.stem == "abs_error":
                img, _ = read_image(raw)
                png = raw.with_suffix(".png")
                write_greyscale(png, img, white)
                written.append(str(png))
    return written


def export_plots_data(run_dirs: Sequence, out_dir, figures: bool = True, white: float = 0.5) -> dict:
    """Tables (and optionally matplotlib figures) for a set of run directories."""
    run_dirs = list(run_dirs)
    records, missing = load_records(run_dirs)
    tables = build_tables(records, load_interval_rows(run_dirs))
    paths = [str(p) for p in write_tables(tables, out_dir)]
    maps = render_maps(run_dirs, white)
    figs = []
    if figures and records:
        from .plotting import render_figures
        figs = [str(p) for p in render_figures(tables, out_dir)]
    return {"tables": paths, "figures": figs, "maps": maps, "missing": missing, "runs": len(records)}
