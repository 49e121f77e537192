"""Poisson negative log-likelihood of count data under the Beer-Lambert model."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .forward import Geometry, Measurement, bin_stack, radon_backproject, radon_project


def poisson_logpmf(counts, log_mean) -> np.ndarray:
    """Elementwise ``log P(y | lambda)`` given ``log lambda`` (broadcasts)."""
    y = np.asarray(counts, dtype=np.float64)
    log_mean = np.asarray(log_mean, dtype=np.float64)
    return y * log_mean - np.exp(log_mean) - gammaln(y + 1.0)


def nll_increment(image, m: Measurement, geometry: Geometry) -> float:
    """``-log p_x(y | angle, I0)`` for a single measurement, log-factorials included."""
    log_mean = np.log(m.intensity) - radon_project(image, m.angle, geometry)
    return float(-poisson_logpmf(m.counts, log_mean).sum())


def nll_gradient(image, m: Measurement, geometry: Geometry) -> np.ndarray:
    """Gradient of :func:`nll_increment` with respect to every pixel."""
    lam = m.intensity * np.exp(-radon_project(image, m.angle, geometry))
    return radon_backproject(m.counts - lam, m.angle, geometry)


def cumulative_nll(image, measurements: Sequence[Measurement], geometry: Geometry) -> float:
    if len(measurements) == 0:
        raise ValueError("need at least one measurement")
    return float(sum(nll_increment(image, m, geometry) for m in measurements))


class PoissonData:
    """Stacked measurement log with a compiled likelihood and gradient.

    This is the fast path used by the reconstructors and the interval
    optimisers. ``append`` is cheap; arrays are rebuilt lazily on the next
    evaluation.
    """

    def __init__(self, geometry: Geometry, measurements: Iterable[Measurement] = ()):
        self.geometry = geometry
        self.measurements: list[Measurement] = []
        self._rows_table: list[np.ndarray] = []
        self._rows_counts: list[np.ndarray] = []
        self._rows_logi0: list[float] = []
        self._logfact = 0.0
        self._cache = None
        self.extend(measurements)

    @property
    def log_factorial(self) -> float:
        """Sum of ``log(y!)`` over all recorded counts."""
        return self._logfact

    def __len__(self):
        return len(self.measurements)

    def append(self, m: Measurement) -> None:
        side = self.geometry.side
        if m.counts.shape != (side,):
            raise ValueError(f"measurement has {m.counts.shape[0]} bins, geometry has {side}")
        self.measurements.append(m)
        self._rows_table.append(bin_stack(side, [m.angle])[0])
        counts = np.asarray(m.counts, dtype=np.float64)
        self._rows_counts.append(counts)
        self._rows_logi0.append(float(np.log(m.intensity)))
        self._logfact += float(gammaln(counts + 1.0).sum())
        self._cache = None

    def extend(self, measurements: Iterable[Measurement]) -> None:
        for m in measurements:
            self.append(m)

    def arrays(self):
        """``(table, counts, log_i0)`` stacked over all recorded measurements."""
        if self._cache is None:
            if not self.measurements:
                raise ValueError("no measurements recorded")
            self._cache = (
                np.ascontiguousarray(np.stack(self._rows_table)),
                np.ascontiguousarray(np.stack(self._rows_counts)),
                np.asarray(self._rows_logi0, dtype=np.float64),
            )
        return self._cache

    def _flat(self, image) -> np.ndarray:
        x = np.ascontiguousarray(image, dtype=np.float64)
        side = self.geometry.side
        if x.shape != (side, side):
            raise ValueError(f"image shape {x.shape} does not match side {side}")
        return x.ravel()

    def nll(self, image) -> float:
        table, counts, log_i0 = self.arrays()
        proj = _kernels.project_stack(self._flat(image), table, self.geometry.side)
        log_lam = log_i0[:, None] - self.geometry.pixel_length * proj
        return float(np.sum(np.exp(log_lam) - counts * log_lam) + self._logfact)

    def nll_many(self, images) -> np.ndarray:
        return np.array([self.nll(x) for x in np.asarray(images)])

    def grad(self, image) -> np.ndarray:
        table, counts, log_i0 = self.arrays()
        g = _kernels.poisson_grad(self._flat(image), table, self.geometry.side,
                                  self.geometry.pixel_length, log_i0, counts)
        return g.reshape(self.geometry.side, self.geometry.side)

    def nll_and_grad(self, image) -> tuple[float, np.ndarray]:
        table, counts, log_i0 = self.arrays()
        total, g = _kernels.poisson_nll_grad(self._flat(image), table, self.geometry.side,
                                             self.geometry.pixel_length, log_i0, counts)
        return float(total + self._logfact), g.reshape(self.geometry.side, self.geometry.side)
