"""Pixel-wise intervals from a likelihood confidence set.

Three families of intervals are provided: worst-case extrema found by pushing
replicates apart inside the set, Student-t intervals from samples (optionally
spread towards the set boundary first), and a bootstrap baseline that
resamples measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .confseq import ConfidenceState
from .forward import Geometry, Measurement, check_image
from .likelihood import PoissonData
from .recon import OptimizerConfig, fbp, mle


@dataclass(frozen=True, eq=False)
class PixelIntervals:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 2:
            raise ValueError("lower and upper must be 2-D grids of equal shape")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if lo.min() < 0.0 or hi.max() > 1.0:
            raise ValueError("interval bounds must lie in [0, 1]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_samples(cls, samples) -> "PixelIntervals":
        s = np.asarray(samples, dtype=np.float64)
        return cls(s.min(axis=0), s.max(axis=0))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * self.width

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class WorstCaseConfig:
    replicates: int = 8
    init_noise: float = 1e-3
    max_outer_steps: int = 1000
    step_size: float = 2.0
    upper_threshold: float = 0.999
    lower_threshold: float = 0.001
    projection_steps: int = 10000
    projection_lr: float = 1e-2
    hard_projection_iters: int = 10
    projection_decay: float = 0.9
    plateau_decay: float = 0.5
    plateau_tol: float = 1e-5
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("replicates", "max_outer_steps", "step_size", "projection_steps",
                     "projection_lr", "projection_decay", "plateau_decay", "plateau_tol", "patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.init_noise < 0:
            raise ValueError("init_noise must be non-negative")
        if not 0.0 < self.lower_threshold < self.upper_threshold < 1.0:
            raise ValueError("bound thresholds must satisfy 0 < lower < upper < 1")
        if not (self.projection_decay < 1 and self.plateau_decay < 1):
            raise ValueError("decay factors must lie in (0, 1)")


@dataclass(frozen=True)
class BoundaryConfig:
    diversity_weight: float = 1000.0
    steps: int = 20
    learning_rate: float = 0.01
    # "mean": ||x - mean||^2 averaged over pixels; "sum": summed over pixels
    reduction: str = "mean"

    def __post_init__(self):
        if not self.diversity_weight > 0:
            raise ValueError("diversity_weight must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.steps < 0 or not self.learning_rate > 0:
            raise ValueError("steps must be non-negative and learning_rate positive")


class ConfidenceSet:
    """The level set ``{x : L_t(x) <= threshold}`` backed by a compiled likelihood."""

    def __init__(self, data: PoissonData, threshold: float):
        if len(data) == 0:
            raise ValueError("confidence set needs at least one measurement")
        self.data = data
        self.threshold = float(threshold)

    @classmethod
    def from_state(cls, state: ConfidenceState, measurements: Sequence[Measurement],
                   geometry: Geometry) -> "ConfidenceSet":
        """Set defined by ``state`` over the measurements it has scored.

        If the state tracks candidates, their stored losses are checked
        against a recomputation to catch mismatched measurement lists.
        """
        data = PoissonData(geometry, measurements)
        if len(data) < state.step:
            raise ValueError(f"state has {state.step} steps but only {len(data)} measurements given")
        for cid, loss in state.tracked.items():
            recomputed = data.nll(state.candidates[cid])
            if abs(recomputed - loss) > 1e-6 * max(1.0, abs(loss)):
                raise ValueError(f"measurements do not match state (candidate {cid!r}: "
                                 f"{recomputed} vs {loss})")
            break
        return cls(data, state.threshold)

    @property
    def geometry(self) -> Geometry:
        return self.data.geometry

    def nll(self, image) -> float:
        return self.data.nll(image)

    def slack(self, image) -> float:
        return self.threshold - self.nll(image)

    def contains(self, image) -> bool:
        return self.slack(image) >= 0.0


@dataclass(frozen=True, eq=False)
class Projection:
    image: np.ndarray
    converged: bool
    steps: int
    nll: float


def project_into_set(image, cset: ConfidenceSet, budget: int = 10000,
                     learning_rate: float = 1e-2) -> Projection:
    """Adam descent on ``L_t`` with [0, 1] clamping until the image enters the set.

    An image already in the set is returned unchanged after 0 steps. If the
    budget runs out, ``converged`` is False and the best iterate is returned.
    """
    side = cset.geometry.side
    x = check_image(image, side)
    table, counts, log_i0 = cset.data.arrays()
    cfg = OptimizerConfig(learning_rate=learning_rate)
    target = cset.threshold - cset.data.log_factorial
    out, steps, f, ok = _kernels.adam_project(
        x.ravel().copy(), table, side, cset.geometry.pixel_length, log_i0, counts, target,
        int(budget), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    result = x.copy() if steps == 0 else out.reshape(side, side)
    return Projection(result, bool(ok), int(steps), float(f + cset.data.log_factorial))


@dataclass(frozen=True, eq=False)
class WorstCaseResult:
    intervals: PixelIntervals
    replicates: np.ndarray
    flags: np.ndarray
    outer_steps: int
    projection_failures: int
    spread_history: tuple = field(repr=False)

    @property
    def all_verified(self) -> bool:
        return not bool(self.flags.any())


def _centred(z: np.ndarray) -> np.ndarray:
    """``z_k - mean(z)``, exactly zero when all replicates coincide."""
    dev = z - z[0]
    return dev - dev.mean(axis=0)


def spread_objective(replicates) -> float:
    """Mean over replicates of ``||z_k - mean(z)||_2``."""
    z = np.asarray(replicates, dtype=np.float64)
    dev = _centred(z)
    return float(np.mean(np.sqrt(np.sum(dev.reshape(z.shape[0], -1) ** 2, axis=1))))


def expansion_direction(replicates, upper: float = 0.999, lower: float = 0.001) -> np.ndarray:
    """Masked, unit-normalised ``z_k - mean(z)`` for every replicate."""
    z = np.asarray(replicates, dtype=np.float64)
    g = _centred(z)
    g[((z > upper) & (g > 0)) | ((z < lower) & (g < 0))] = 0.0
    norms = np.sqrt(np.sum(g.reshape(z.shape[0], -1) ** 2, axis=1))
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    return g * scale[:, None, None]


def worst_case_intervals(prediction, cset: ConfidenceSet,
                         config: WorstCaseConfig = WorstCaseConfig()) -> WorstCaseResult:
    """Approximate pixel-wise extrema of the set by spreading replicates apart."""
    side = cset.geometry.side
    x = check_image(prediction, side)
    failures = 0

    def project(z):
        nonlocal failures
        p = project_into_set(z, cset, config.projection_steps, config.projection_lr)
        failures += not p.converged
        return p

    start = project(x).image
    rng = np.random.default_rng(config.seed)
    z = np.clip(start[None] + rng.normal(0.0, config.init_noise, size=(config.replicates, side, side)),
                0.0, 1.0)
    z = np.stack([project(zk).image for zk in z])

    eta = config.step_size
    spread = spread_objective(z)
    history = [spread]
    patience = 0
    outer = 0
    while outer < config.max_outer_steps:
        outer += 1
        z = np.clip(z + eta * expansion_direction(z, config.upper_threshold, config.lower_threshold),
                    0.0, 1.0)
        hard = False
        for k in range(config.replicates):
            p = project(z[k])
            z[k] = p.image
            hard |= p.steps > config.hard_projection_iters
        if hard:
            eta *= config.projection_decay
        new = spread_objective(z)
        history.append(new)
        if new - spread <= config.plateau_tol:
            eta *= config.plateau_decay
            patience += 1
            if patience > config.patience:
                break
        spread = new
    flags = np.array([not cset.contains(zk) for zk in z])
    return WorstCaseResult(PixelIntervals.from_samples(z), z, flags, outer, failures, tuple(history))


def boundary_gradient(samples, cset: ConfidenceSet, config: BoundaryConfig = BoundaryConfig()
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the batch loss and the per-sample membership mask.

    In-set samples use ``-gamma ||x - mean||^2`` (descent pushes them apart,
    differentiated through the mean as ``(1 - 1/K)``); out-of-set samples use
    ``L_t(x) - threshold``. Both are scaled by ``1/K`` from the batch average.
    With ``reduction="mean"`` the squared distance is averaged over pixels.
    """
    x = np.asarray(samples, dtype=np.float64)
    k = x.shape[0]
    weight = config.diversity_weight
    if config.reduction == "mean":
        weight /= x[0].size
    dev = _centred(x)
    grads = np.empty_like(x)
    inside = np.empty(k, dtype=bool)
    for j in range(k):
        loss, g = cset.data.nll_and_grad(x[j])
        inside[j] = loss <= cset.threshold
        if inside[j]:
            grads[j] = -2.0 * weight * (1.0 - 1.0 / k) * dev[j]
        else:
            grads[j] = g
    return grads / k, inside


def boundary_spread(samples, cset: ConfidenceSet, config: BoundaryConfig = BoundaryConfig()
                    ) -> np.ndarray:
    """Push ``K >= 2`` samples towards the boundary of the set with plain gradient descent."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] < 2:
        raise ValueError("boundary spread needs a stack of K >= 2 images")
    for xk in x:
        check_image(xk, cset.geometry.side, "sample")
    x = x.copy()
    for _ in range(config.steps):
        grads, _ = boundary_gradient(x, cset, config)
        x = np.clip(x - config.learning_rate * grads, 0.0, 1.0)
    return x


def pixel_spread(samples) -> float:
    """Mean over pixels of ``max - min`` across samples."""
    s = np.asarray(samples, dtype=np.float64)
    return float(np.mean(s.max(axis=0) - s.min(axis=0)))


def student_t_intervals(samples, delta: float) -> PixelIntervals:
    """``mean +- t_{1-delta/2, K-1} * sd / sqrt(K)`` per pixel, clamped to [0, 1]."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 3 or s.shape[0] < 2:
        raise ValueError("need a stack of K >= 2 samples")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    k = s.shape[0]
    mean = s.mean(axis=0)
    half = stats.t.ppf(1.0 - delta / 2.0, k - 1) * s.std(axis=0, ddof=1) / np.sqrt(k)
    return PixelIntervals(np.clip(mean - half, 0.0, 1.0), np.clip(mean + half, 0.0, 1.0))


def boundary_intervals(samples, cset: ConfidenceSet, delta: float,
                       config: BoundaryConfig = BoundaryConfig()) -> PixelIntervals:
    return student_t_intervals(boundary_spread(samples, cset, config), delta)


def nearest_rank(n: int, q: float) -> int:
    """Zero-based index of the ``q`` quantile of ``n`` sorted values (nearest-rank rule)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile level must lie in [0, 1]")
    return min(max(int(np.ceil(q * n - 1e-9)), 1), n) - 1


RECONSTRUCTORS: dict[str, Callable] = {
    "fbp": fbp,
    "mle": lambda ms, g: mle(ms, fbp(ms, g), geometry=g),
}


def bootstrap_intervals(reconstructor, measurements: Sequence[Measurement], geometry: Geometry,
                        n_boot: int = 1000, delta: float = 0.05, seed: int = 0) -> PixelIntervals:
    """Percentile intervals over reconstructions of measurement resamples.

    ``reconstructor`` is ``"fbp"``, ``"mle"`` or a callable
    ``(measurements, geometry) -> image``.
    """
    if n_boot < 2:
        raise ValueError("need at least 2 bootstrap resamples")
    ms = list(measurements)
    if not ms:
        raise ValueError("need at least one measurement")
    recon = RECONSTRUCTORS[reconstructor] if isinstance(reconstructor, str) else reconstructor
    rng = np.random.default_rng(seed)
    stack = np.stack([
        recon([ms[i] for i in rng.integers(0, len(ms), size=len(ms))], geometry)
        for _ in range(n_boot)
    ])
    stack.sort(axis=0)
    lo = stack[nearest_rank(n_boot, delta / 2.0)]
    hi = stack[nearest_rank(n_boot, 1.0 - delta / 2.0)]
    return PixelIntervals(np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0))
