"""Interval computation for a finished run and its artifacts."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metrics import ause, coverage_and_width
from ..predictors import ensemble_predictor
from ..recon import OptimizerConfig
from ..uq import (BoundaryConfig, ConfidenceSet, PixelIntervals, WorstCaseConfig, boundary_spread,
                  bootstrap_intervals, student_t_intervals, worst_case_intervals)
from .io import write_csv, write_greyscale, write_image
from .runner import RunResult


@dataclass(eq=False)
class IntervalReport:
    intervals: dict
    rows: list
    flags: int


def ensemble_samples(result: RunResult, size: int = 8) -> np.ndarray:
    """Samples of a jittered-MLE ensemble fed the run's full measurement log."""
    cfg = result.config
    ens = ensemble_predictor(result.geometry, range(size),
                             OptimizerConfig(steps=cfg.mle_steps, learning_rate=cfg.learning_rate))
    for step in result.steps:
        ens.observe(step)
    return ens.samples()


def compute_intervals(result: RunResult, methods=("worst_case", "boundary"),
                      worst: WorstCaseConfig = WorstCaseConfig(),
                      boundary: BoundaryConfig = BoundaryConfig(),
                      n_boot: int = 1000, ensemble_size: int = 8) -> IntervalReport:
    """Intervals around the final prediction for each requested method.

    Each row reports ground-truth pixel coverage, mean width and AUSE of the
    half-width map against the prediction's absolute error.
    """
    cfg = result.config
    cset = ConfidenceSet.from_state(result.final_state, result.confidence_measurements, result.geometry)
    found: dict[str, PixelIntervals] = {}
    flags = 0
    samples = None
    for method in methods:
        if method == "worst_case":
            wc = worst_case_intervals(result.prediction, cset, worst)
            flags += int(wc.flags.sum())
            found[method] = wc.intervals
        elif method in ("boundary", "student_t"):
            if samples is None:
                samples = ensemble_samples(result, ensemble_size)
            stack = boundary_spread(samples, cset, boundary) if method == "boundary" else samples
            found[method] = student_t_intervals(stack, cfg.delta)
        elif method in ("bootstrap_fbp", "bootstrap_mle"):
            found[method] = bootstrap_intervals(method.split("_")[1], result.confidence_measurements,
                                                result.geometry, n_boot, cfg.delta, seed=cfg.seed)
        else:
            raise ValueError(f"unknown interval method {method!r}")
    error = np.abs(result.prediction - result.truth)
    rows = []
    for method, iv in found.items():
        cov, width = coverage_and_width(iv, result.truth)
        rows.append({"family": cfg.family, "phantom": cfg.phantom, "intensity": cfg.total_intensity,
                     "method": method, "seed": cfg.seed, "coverage": cov, "mean_width": width,
                     "ause": ause(iv.half_width, error),
                     "flags": flags if method == "worst_case" else 0})
    return IntervalReport(found, rows, flags)


def write_intervals(report: IntervalReport, result: RunResult, out_dir, white: float = 0.5) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"family": result.config.family, "phantom": result.config.phantom}
    for method, iv in report.intervals.items():
        write_image(out / f"{method}_lower.f32", iv.lower, kind="lower", method=method, **meta)
        write_image(out / f"{method}_upper.f32", iv.upper, kind="upper", method=method, **meta)
        write_image(out / f"{method}_halfwidth.f32", iv.half_width, kind="half_width", method=method, **meta)
        write_greyscale(out / f"{method}_halfwidth.png", iv.half_width, white)
    error = np.abs(result.prediction - result.truth)
    write_image(out / "abs_error.f32", error, kind="abs_error", **meta)
    write_greyscale(out / "abs_error.png", error, white)
    write_csv(out / "intervals.csv", report.rows)
    return out
