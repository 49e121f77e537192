"""Artifact formats: raw float32 images with JSON sidecars, JSONL measurement logs, CSV tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

from ..forward import Measurement


def write_image(path, image, **metadata) -> None:
    """Write ``path`` (raw little-endian float32, row-major) and ``path.json``."""
    path = Path(path)
    arr = np.asarray(image, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("images must be 2-D")
    path.write_bytes(arr.tobytes(order="C"))
    meta = {"shape": list(arr.shape), "dtype": "float32", "byte_order": "little", **metadata}
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_image(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(sidecar(path).read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"])
    return arr.astype(np.float64), meta


def write_greyscale(path, image, white: float = 1.0) -> None:
    """8-bit render: 0 maps to black, values at or above ``white`` to white."""
    if not white > 0:
        raise ValueError("white point must be positive")
    x = np.clip(np.asarray(image, dtype=np.float64) / white, 0.0, 1.0)
    PILImage.fromarray(np.round(x * 255.0).astype(np.uint8)).save(path)


def write_measurements(path, steps: Sequence[Sequence[Measurement]]) -> None:
    """One JSON record per measurement, tagged with its acquisition step."""
    with open(path, "w") as fh:
        for t, step in enumerate(steps):
            for m in step:
                fh.write(json.dumps({"step": t, **m.to_dict()}) + "\n")


def read_measurements(path) -> list[list[Measurement]]:
    steps: list[list[Measurement]] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            t = rec.pop("step")
            if t == len(steps):
                steps.append([])
            elif t != len(steps) - 1:
                raise ValueError(f"line {line_no}: step {t} out of order")
            steps[-1].append(Measurement.from_dict(rec))
    return steps


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows: Iterable[dict], columns: Sequence[str] | None = None) -> None:
    """Comma-separated table with a header row; floats use ``repr`` so they round-trip."""
    rows = list(rows)
    if columns is None:
        # union of keys in first-seen order, so heterogeneous rows share one header
        columns = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _parse(v: str):
    if v == "":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]
