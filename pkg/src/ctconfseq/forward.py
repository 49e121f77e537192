"""Parallel-beam forward model: binary Radon matrix, Beer-Lambert means, Poisson counts.

Images are plain ``(r, r)`` float64 arrays with values in [0, 1]. Row 0 is the
top of the image. A projection at angle 0 integrates along image columns, so
detector bin ``j`` at angle 0 collects column ``j``. Angles are in degrees and
measured counter-clockwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _kernels

DEFAULT_PATH_SCALE = 4.0
GOLDEN_ANGLE_DEG = 137.50776405003785


def check_image(image, side: int | None = None, name: str = "image") -> np.ndarray:
    """Validate an image array and return it as float64."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square 2-D array, got shape {arr.shape}")
    if side is not None and arr.shape[0] != side:
        raise ValueError(f"{name} side {arr.shape[0]} does not match geometry side {side}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class Geometry:
    """Square image of ``side`` pixels seen by a detector with ``side`` bins.

    ``path_scale`` is the physical length of the image side, so one pixel
    contributes ``path_scale / side`` to a line integral.
    """

    side: int
    path_scale: float = DEFAULT_PATH_SCALE

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 1:
            raise ValueError(f"side must be a positive integer, got {self.side}")
        if not self.path_scale > 0:
            raise ValueError(f"path_scale must be positive, got {self.path_scale}")

    @property
    def n_bins(self) -> int:
        return self.side

    @property
    def pixel_length(self) -> float:
        return self.path_scale / self.side

    def upsampled(self, factor: int = 2) -> "Geometry":
        """Same physical object on a ``factor``-times finer grid."""
        return Geometry(self.side * factor, self.path_scale)


@dataclass(frozen=True, eq=False)
class Measurement:
    """One acquisition step at a single angle: per-bin intensity and counts."""

    angle: float
    intensity: float
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0.0 <= self.angle < 180.0:
            raise ValueError(f"angle must lie in [0, 180), got {self.angle}")
        if not (np.isfinite(self.intensity) and self.intensity > 0):
            raise ValueError(f"intensity must be positive, got {self.intensity}")
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise ValueError("counts must be a 1-D vector")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and non-negative")
        counts = counts.copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other):
        if not isinstance(other, Measurement):
            return NotImplemented
        return (
            self.angle == other.angle
            and self.intensity == other.intensity
            and np.array_equal(self.counts, other.counts)
        )

    def to_dict(self) -> dict:
        counts = self.counts
        if np.issubdtype(counts.dtype, np.integer):
            values = [int(c) for c in counts]
        else:
            values = [float(c) for c in counts]
        return {"angle": float(self.angle), "intensity": float(self.intensity), "counts": values}

    @classmethod
    def from_dict(cls, d: dict) -> "Measurement":
        counts = d["counts"]
        if all(isinstance(c, int) for c in counts):
            arr = np.asarray(counts, dtype=np.int64)
        else:
            arr = np.asarray(counts, dtype=np.float64)
        return cls(float(d["angle"]), float(d["intensity"]), arr)


@dataclass(frozen=True)
class AcquisitionPlan:
    """Ordered angles and intensities for every acquisition step.

    In sparse mode ``angles[t]`` is the single angle of step ``t``. In dense
    mode every step measures the whole ``angles`` grid and ``intensities[t]``
    is split evenly over the grid.
    """

    mode: str
    angles: tuple
    intensities: tuple
    warmup_steps: int = 0

    def __post_init__(self):
        if self.mode not in ("sparse", "dense"):
            raise ValueError(f"mode must be 'sparse' or 'dense', got {self.mode!r}")
        if any(not 0.0 <= a < 180.0 for a in self.angles):
            raise ValueError("angles must lie in [0, 180)")
        if any(not i > 0 for i in self.intensities):
            raise ValueError("intensities must be positive")
        if self.mode == "sparse":
            if len(self.angles) != len(self.intensities):
                raise ValueError("sparse plan needs one intensity per angle")
            if len(set(self.intensities)) > 1:
                raise ValueError("sparse plan uses a constant intensity")
        if not 0 <= self.warmup_steps < self.n_steps:
            raise ValueError("warmup_steps must be non-negative and below the number of steps")

    @property
    def n_steps(self) -> int:
        return len(self.intensities)

    def step_angles(self, t: int) -> tuple:
        return (self.angles[t],) if self.mode == "sparse" else tuple(self.angles)

    def step_intensity(self, t: int) -> float:
        """Per-bin incident intensity of each measurement taken at step ``t``."""
        if self.mode == "sparse":
            return float(self.intensities[t])
        return float(self.intensities[t]) / len(self.angles)


def golden_angles(n: int, start: float = 0.0) -> np.ndarray:
    return np.mod(start + GOLDEN_ANGLE_DEG * np.arange(n), 180.0)


def uniform_angles(n: int) -> np.ndarray:
    return np.arange(n) * (180.0 / n)


def sparse_plan(n_angles: int, total_intensity: float, side: int, warmup: int,
                schedule: str = "golden", seed: int = 0) -> AcquisitionPlan:
    """Sparse plan whose confidence phase receives ``total_intensity`` photons per detector row.

    The per-bin intensity is ``total_intensity / ((n_angles - warmup) * side)``.
    """
    if schedule == "golden":
        angles = golden_angles(n_angles)
    elif schedule == "uniform":
        angles = np.random.default_rng(seed).permutation(uniform_angles(n_angles))
    else:
        raise ValueError(f"unknown angle schedule {schedule!r}")
    t_final = n_angles - warmup
    if t_final < 1:
        raise ValueError("need at least one step after warmup")
    i0 = total_intensity / (t_final * side)
    return AcquisitionPlan("sparse", tuple(float(a) for a in angles), (i0,) * n_angles, warmup)


def dense_plan(n_angles: int, n_steps: int, i_first: float, i_last: float,
               warmup: int = 0) -> AcquisitionPlan:
    intensities = np.geomspace(i_first, i_last, n_steps)
    return AcquisitionPlan("dense", tuple(float(a) for a in uniform_angles(n_angles)),
                           tuple(float(i) for i in intensities), warmup)


@lru_cache(maxsize=4096)
def _bin_table(side: int, angle: float) -> np.ndarray:
    theta = np.deg2rad(angle)
    centers = np.arange(side) + 0.5 - side / 2.0
    x = np.broadcast_to(centers[None, :], (side, side))
    y = np.broadcast_to(-centers[:, None], (side, side))
    s = x * np.cos(theta) + y * np.sin(theta)
    bins = np.floor(s + side / 2.0).astype(np.int64).ravel()
    bins[(bins < 0) | (bins >= side)] = -1
    bins.setflags(write=False)
    return bins


def pixel_bins(side: int, angle: float) -> np.ndarray:
    """Detector bin hit by each pixel centre (row-major), ``-1`` when it misses the detector."""
    return _bin_table(int(side), float(angle))


def bin_stack(side: int, angles: Sequence[float]) -> np.ndarray:
    """``(n_angles, side**2)`` int32 bin table with ``side`` as the "missed" sentinel."""
    table = np.empty((len(angles), side * side), dtype=np.int32)
    for a, angle in enumerate(angles):
        bins = pixel_bins(side, angle)
        table[a] = np.where(bins < 0, side, bins)
    return table


def radon_project(image, angle: float, geometry: Geometry) -> np.ndarray:
    """Line integrals ``(l/r) R_angle x`` for every detector bin."""
    x = np.asarray(image, dtype=np.float64)
    if x.shape != (geometry.side, geometry.side):
        raise ValueError(f"image shape {x.shape} does not match geometry side {geometry.side}")
    bins = pixel_bins(geometry.side, angle)
    hit = bins >= 0
    sums = np.bincount(bins[hit], weights=x.ravel()[hit], minlength=geometry.side)
    return geometry.pixel_length * sums


def radon_backproject(values, angle: float, geometry: Geometry) -> np.ndarray:
    """Adjoint of :func:`radon_project`."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (geometry.side,):
        raise ValueError(f"expected {geometry.side} detector values, got shape {v.shape}")
    bins = pixel_bins(geometry.side, angle)
    out = np.where(bins >= 0, v[np.maximum(bins, 0)], 0.0)
    return geometry.pixel_length * out.reshape(geometry.side, geometry.side)


def project_many(image, angles: Sequence[float], geometry: Geometry) -> np.ndarray:
    """Sinogram ``(n_angles, side)`` of line integrals; compiled path."""
    x = np.ascontiguousarray(image, dtype=np.float64).ravel()
    table = bin_stack(geometry.side, angles)
    return geometry.pixel_length * _kernels.project_stack(x, table, geometry.side)


def mean_counts(image, angle: float, intensity: float, geometry: Geometry) -> np.ndarray:
    """Beer-Lambert expected counts ``I0 exp(-(l/r) [R x]_i)``."""
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    return intensity * np.exp(-radon_project(image, angle, geometry))


def sample_counts(means, seed) -> np.ndarray:
    """Independent Poisson draws, one per entry of ``means``."""
    lam = np.asarray(means, dtype=np.float64)
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError("Poisson means must be finite and positive")
    rng = np.random.default_rng(seed)
    return rng.poisson(lam).astype(np.int64)


def downsample(image, factor: int = 2) -> np.ndarray:
    """Block-average an image by an integer factor."""
    x = np.asarray(image, dtype=np.float64)
    n = x.shape[0]
    if n % factor:
        raise ValueError(f"side {n} not divisible by {factor}")
    m = n // factor
    return x.reshape(m, factor, m, factor).mean(axis=(1, 3))


def highres_means(truth_highres, angle: float, intensity: float, target: Geometry) -> np.ndarray:
    """Expected counts per fine detector bin (``2r`` bins at ``I0/2`` each)."""
    fine = target.upsampled(2)
    return mean_counts(truth_highres, angle, intensity / 2.0, fine)


def simulate_step(truth_highres, angle: float, intensity: float, seed,
                  target: Geometry) -> Measurement:
    """Simulate one measurement on a 2x finer grid and sum adjacent detector bins.

    Sums of independent Poisson variables are Poisson, so the returned counts
    are exact Poisson draws while the reconstruction model never sees the
    discretisation that produced them.
    """
    x = np.asarray(truth_highres, dtype=np.float64)
    if x.shape != (2 * target.side, 2 * target.side):
        raise ValueError(
            f"high-resolution truth must have side {2 * target.side}, got {x.shape}")
    fine_counts = sample_counts(highres_means(x, angle, intensity, target), seed)
    counts = fine_counts.reshape(target.side, 2).sum(axis=1)
    return Measurement(float(angle), float(intensity), counts)


def step_seed(base_seed: int, *keys: int) -> int:
    """Derive a 63-bit seed for a sub-stream (e.g. one acquisition step)."""
    ss = np.random.SeedSequence([int(base_seed), *[int(k) for k in keys]])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
