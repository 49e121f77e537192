"""Matplotlib renderings of the exported tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _by_method(rows, x, y):
    out = {}
    for r in rows:
        out.setdefault(r["method"], []).append((float(r[x]), float(r[y]), float(r.get("sem") or 0.0)))
    return {m: sorted(v) for m, v in out.items()}


def _line_plot(rows, x, y, path, xlabel, ylabel, logx=False, logy=False, diagonal=False, hline=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method, pts in _by_method(rows, x, y).items():
        xs, ys, es = zip(*pts)
        ax.errorbar(xs, ys, yerr=es, marker="o", ms=3, capsize=2, label=method)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    if diagonal:
        lim = max(float(r[x]) for r in rows)
        ax.plot([0, lim], [0, lim], "k--", lw=0.8)
    if hline is not None:
        ax.axhline(hline, color="k", ls="--", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_figures(tables: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    written = []
    if tables.get("tightness"):
        written.append(_line_plot(tables["tightness"], "intensity", "mean_gap", out / "tightness.png",
                                  "total intensity", "final gap beta - L(x*)", logx=True, logy=True))
    if tables.get("rates"):
        written.append(_line_plot(tables["rates"], "intensity", "crossover_rate", out / "rates.png",
                                  "total intensity", "crossover rate", logx=True, hline=0.05))
    if tables.get("psnr"):
        written.append(_line_plot(tables["psnr"], "intensity", "mean_psnr", out / "psnr.png",
                                  "total intensity", "PSNR [dB]", logx=True))
    if tables.get("calibration"):
        for intensity in sorted({r["intensity"] for r in tables["calibration"]}, key=float):
            rows = [r for r in tables["calibration"] if r["intensity"] == intensity]
            written.append(_line_plot(rows, "delta", "crossover_rate",
                                      out / f"calibration_{float(intensity):.0e}.png",
                                      "delta", "crossover rate", diagonal=True))
    if tables.get("exclusion"):
        for intensity in sorted({r["intensity"] for r in tables["exclusion"]}, key=float):
            rows = [r for r in tables["exclusion"] if r["intensity"] == intensity]
            written.append(_line_plot(rows, "rotation", "exclusion_rate",
                                      out / f"exclusion_{float(intensity):.0e}.png",
                                      "rotation [deg]", "exclusion rate"))
    return written
