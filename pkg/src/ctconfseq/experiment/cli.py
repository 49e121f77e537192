"""Command line: simulate, run, intervals, sweep, replay, export.

Every subcommand prints comma-separated rows on stdout. Exit codes: 0
success, 1 invalid configuration or input, 2 partial sweep failure, 3 replay
mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .artifacts import load_run_inputs, load_trajectory, write_config_echo, write_run
from .config import ConfigError, RunConfig, config_from_dict, load_config, load_sweep
from .io import write_image, write_measurements
from .runner import ground_truth, replay_run, run, simulate_measurements

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_MISMATCH = 0, 1, 2, 3

_SKIP = {"schema_version", "mode"}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip()) if text.strip() else ()


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per config field; unset flags leave file/default values alone."""
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    for f in fields(RunConfig):
        if f.name in _SKIP:
            continue
        kind = {bool: _parse_bool, tuple: _parse_floats}.get(type(f.default), type(f.default))
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None,
                            help=f"default: {f.default}")


def config_from_args(args, mode: str | None = None) -> RunConfig:
    base = load_config(args.config).to_dict() if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if f.name not in _SKIP and value is not None:
            base[f.name] = list(value) if isinstance(value, tuple) else value
    if mode is not None:
        base["mode"] = mode
    return config_from_dict(base)


def _emit(rows, stream=None) -> None:
    import csv
    stream = stream or sys.stdout
    rows = list(rows)
    if not rows:
        return
    columns = list(dict.fromkeys(k for r in rows for k in r))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (r.get(c, "") for c in columns)])


def cmd_simulate(args) -> int:
    cfg = config_from_args(args, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hi, truth = ground_truth(cfg)
    steps = simulate_measurements(cfg, hi)
    write_config_echo(cfg, out / "config.json")
    write_measurements(out / "measurements.jsonl", steps)
    write_image(out / "truth.f32", truth, kind="truth", family=cfg.family, phantom=cfg.phantom, side=cfg.side)
    _emit([{"step": t, "angle": m.angle, "intensity": m.intensity, "total_counts": int(np.sum(m.counts))}
           for t, step in enumerate(steps) for m in step])
    return EXIT_OK


def _trajectory_figure(result, path) -> None:
    from .plotting import plt
    fig, ax = plt.subplots(figsize=(5, 3.5))
    steps = [s.step for s in result.states]
    ax.plot(steps, result.betas - result.losses(), label="beta - L(x*)")
    ax.axhline(-result.final_state.log_inv_delta, color="k", ls="--", lw=0.8, label="-log(1/delta)")
    ax.set_xlabel("step")
    ax.set_ylabel("gap")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_run(args) -> int:
    cfg = config_from_args(args, args.mode)
    result = run(cfg)
    if args.out:
        out = write_run(result, args.out)
        if args.figures:
            _trajectory_figure(result, out / "trajectory.png")
    _emit([result.metrics_row()])
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg, steps = load_run_inputs(args.run_dir)
    result = replay_run(cfg, steps)
    stored = load_trajectory(args.run_dir)
    fresh = result.trajectory_rows()
    worst = 0.0
    if len(stored) != len(fresh):
        worst = float("inf")
    else:
        for a, b in zip(stored, fresh):
            for key, val in b.items():
                if key.startswith(("beta", "L_")):
                    worst = max(worst, abs(float(a[key]) - float(val)))
    ok = worst <= args.tolerance
    _emit([{"run": str(args.run_dir), "steps": len(fresh), "max_abs_diff": worst, "match": ok}])
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_intervals(args) -> int:
    from ..uq import BoundaryConfig, WorstCaseConfig
    from .intervals import compute_intervals, write_intervals
    cfg, steps = load_run_inputs(args.run_dir)
    result = replay_run(cfg, steps)
    worst = WorstCaseConfig(max_outer_steps=args.max_outer_steps, seed=cfg.seed)
    report = compute_intervals(result, tuple(args.methods.split(",")), worst, BoundaryConfig(),
                               n_boot=args.n_boot)
    write_intervals(report, result, Path(args.run_dir) / "intervals", args.white)
    _emit(report.rows)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import sweep
    cfg = load_sweep(args.config)
    report = sweep(cfg, args.out, args.workers)
    _emit([{"label": o.label, "ok": o.ok} for o in report.outcomes])
    for o in report.failures:
        print(f"cell {o.label} failed:\n{o.error}", file=sys.stderr)
    return EXIT_PARTIAL if report.failures else EXIT_OK


def cmd_export(args) -> int:
    from .export import export_plots_data
    dirs = []
    for d in args.runs:
        d = Path(d)
        cells = sorted((d / "cells").glob("*")) if (d / "cells").is_dir() else []
        dirs.extend(cells or [d])
    summary = export_plots_data(dirs, args.out, figures=not args.no_figures, white=args.white)
    for m in summary["missing"]:
        print(f"missing artifacts: {m}", file=sys.stderr)
    _emit([{"kind": k, "path": p} for k in ("tables", "figures", "maps") for p in summary[k]])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctconfseq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate and log measurements only")
    p.add_argument("mode", choices=("sparse", "dense"), nargs="?", default="sparse")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run one confidence sequence")
    p.add_argument("mode", choices=("sparse", "dense"))
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--figures", action="store_true", help="also render a trajectory figure")
    add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("intervals", help="pixel-wise intervals for a stored run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--methods", default="worst_case,boundary",
                   help="comma list of worst_case, boundary, student_t, bootstrap_fbp, bootstrap_mle")
    p.add_argument("--max-outer-steps", type=int, default=1000)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--white", type=float, default=0.5, help="white point of greyscale maps")
    p.set_defaults(func=cmd_intervals)

    p = sub.add_parser("sweep", help="run a grid of cells")
    p.add_argument("config", type=Path, help="JSON sweep configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="recompute a run from its measurement log")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("export", help="per-figure tables, figures and greyscale maps")
    p.add_argument("runs", nargs="+", help="run directories or sweep directories")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--white", type=float, default=0.5)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
