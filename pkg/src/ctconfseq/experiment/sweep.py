"""Grid sweeps over (family, phantom, intensity, predictor, seed) cells."""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .artifacts import write_run
from .config import RunConfig, SweepConfig
from .export import RunRecord, build_tables, write_tables
from .io import write_csv
from .runner import run_many


@dataclass
class CellOutcome:
    label: str
    ok: bool
    record: RunRecord | None = None
    error: str = ""


def _run_chunk(cells: Sequence[RunConfig], out_dir: str | None) -> list[CellOutcome]:
    """Run cells in lockstep; if the batch fails, retry one by one to isolate the failure."""
    try:
        results = run_many(cells)
    except Exception:
        results = None
    outcomes = []
    for i, cfg in enumerate(cells):
        try:
            res = results[i] if results is not None else run_many([cfg])[0]
            if out_dir is not None:
                write_run(res, Path(out_dir) / "cells" / cfg.label)
            outcomes.append(CellOutcome(cfg.label, True, RunRecord.from_result(res)))
        except Exception:
            outcomes.append(CellOutcome(cfg.label, False, error=traceback.format_exc(limit=3)))
    return outcomes


def _chunks(cells: list, n: int) -> list[list]:
    size = max(1, -(-len(cells) // n))
    return [cells[i:i + size] for i in range(0, len(cells), size)]


@dataclass
class SweepReport:
    outcomes: list
    tables: dict

    @property
    def failures(self) -> list[CellOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def records(self) -> list[RunRecord]:
        return [o.record for o in self.outcomes if o.ok]


def sweep(config: SweepConfig, out_dir=None, workers: int | None = None) -> SweepReport:
    """Run every cell, continuing past failures, and aggregate the survivors.

    Cells are split into one chunk per worker process; each chunk runs in
    lockstep inside its process.
    """
    cells = config.cells()
    workers = workers or config.workers
    out = None if out_dir is None else str(out_dir)
    chunks = _chunks(cells, workers)
    if workers == 1:
        outcomes = [o for chunk in chunks for o in _run_chunk(chunk, out)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, chunk, out) for chunk in chunks]
            outcomes = [o for f in futures for o in f.result()]
    report = SweepReport(outcomes, build_tables([o.record for o in outcomes if o.ok]))
    if out_dir is not None:
        tables_dir = Path(out_dir) / "tables"
        write_tables(report.tables, tables_dir)
        write_csv(Path(out_dir) / "metrics.csv", [o.record.metrics for o in outcomes if o.ok])
        write_csv(Path(out_dir) / "cells.csv",
                  [{"label": o.label, "ok": o.ok, "error": o.error.strip().splitlines()[-1] if o.error else ""}
                   for o in outcomes], ("label", "ok", "error"))
    return report
