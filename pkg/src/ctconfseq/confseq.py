"""Sequential likelihood-mixing confidence sequences.

The confidence set after ``t`` steps is the likelihood level set

    C_t = {x : L_t(x) <= beta_t + log(1/delta)}

where ``beta_t`` accumulates the mixture negative log-likelihood of each new
measurement under a mixing distribution built from earlier data only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .forward import Geometry, Measurement, check_image, mean_counts
from .likelihood import nll_increment, poisson_logpmf


@dataclass(frozen=True, eq=False)
class MixingDistribution:
    """Uniform mixture of ``K`` point masses.

    ``step`` is the number of acquisition steps the producing predictor had
    seen; the mixture may only score the measurement that comes next.
    """

    samples: np.ndarray
    step: int = 0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError("samples must be an image or a non-empty stack of images")
        for x in arr:
            check_image(x, name="mixture sample")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @classmethod
    def dirac(cls, image, step: int = 0) -> "MixingDistribution":
        return cls(np.asarray(image)[None], step)

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> "MixingDistribution":
        """Collapse to a point mass at the sample mean."""
        return MixingDistribution.dirac(self.samples.mean(axis=0), self.step)


def mixture_nll(sample_nll, axis: int = 0):
    """``-log (1/K) sum_k exp(-l_k)`` evaluated stably along ``axis``.

    Written as ``min_k l_k + (log K - log sum_k exp(min - l_k))`` so the result
    is sandwiched between ``min_k l_k`` and ``min_k l_k + log K`` even in
    floating point, and equals ``l`` exactly when all entries coincide.
    """
    ells = np.asarray(sample_nll, dtype=np.float64)
    k = ells.shape[axis]
    if k == 1:
        out = np.take(ells, 0, axis=axis)
        return float(out) if np.ndim(out) == 0 else out
    low = ells.min(axis=axis)
    total = np.exp(np.expand_dims(low, axis) - ells).sum(axis=axis)
    out = low + (np.log(k) - np.log(total))
    return float(out) if np.ndim(out) == 0 else out


def _as_list(measurements) -> list[Measurement]:
    if isinstance(measurements, Measurement):
        return [measurements]
    ms = list(measurements)
    if not ms:
        raise ValueError("empty acquisition step")
    return ms


def sample_nll(mixing: MixingDistribution, m: Measurement, geometry: Geometry) -> np.ndarray:
    """Per-sample negative log-likelihoods of one measurement."""
    return np.array([nll_increment(x, m, geometry) for x in mixing.samples])


def beta_increment(mixing: MixingDistribution, measurements, geometry: Geometry) -> float:
    """Confidence-coefficient increment for one acquisition step.

    A dense step (several measurements) contributes the sum of the
    per-measurement mixture terms.
    """
    return sum(mixture_nll(sample_nll(mixing, m, geometry)) for m in _as_list(measurements))


@dataclass(frozen=True)
class ConfidenceState:
    """Running confidence coefficient and tracked candidate log-likelihoods.

    ``offset`` counts acquisition steps consumed before the sequence started
    (warm-up); a mixture scoring step ``t`` must have been produced after
    exactly ``offset + t`` steps.
    """

    delta: float
    step: int = 0
    beta: float = 0.0
    tracked: Mapping[str, float] = field(default_factory=dict)
    candidates: Mapping[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)
    offset: int = 0
    last_increment: float = float("nan")
    last_sample_nll: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")

    @classmethod
    def start(cls, delta: float, candidates: Mapping[str, np.ndarray] | None = None,
              offset: int = 0) -> "ConfidenceState":
        candidates = {str(k): check_image(v, name=f"candidate {k}") for k, v in (candidates or {}).items()}
        return cls(delta=delta, tracked={k: 0.0 for k in candidates}, candidates=candidates,
                   offset=offset)

    @property
    def log_inv_delta(self) -> float:
        return math.log(1.0 / self.delta)

    @property
    def threshold(self) -> float:
        return self.beta + self.log_inv_delta


def update(state: ConfidenceState, mixing: MixingDistribution, measurements,
           geometry: Geometry) -> ConfidenceState:
    """Score the next acquisition step and advance every tracked candidate."""
    expected = state.offset + state.step
    if mixing.step != expected:
        raise ValueError(
            f"mixture built after {mixing.step} steps cannot score step {expected + 1}; "
            f"it must be built after exactly {expected}")
    ms = _as_list(measurements)
    ells = [sample_nll(mixing, m, geometry) for m in ms]
    increment = sum(mixture_nll(e) for e in ells)
    tracked = {
        cid: state.tracked[cid] + sum(nll_increment(state.candidates[cid], m, geometry) for m in ms)
        for cid in state.tracked
    }
    return replace(state, step=state.step + 1, beta=state.beta + increment, tracked=tracked,
                   last_increment=increment,
                   last_sample_nll=tuple(np.sum(ells, axis=0).tolist()))


def membership(state: ConfidenceState, candidate_id: str) -> tuple[bool, float]:
    """Whether a tracked candidate lies in the current set, and its slack."""
    if candidate_id not in state.tracked:
        raise KeyError(f"candidate {candidate_id!r} is not tracked")
    # (beta - L) first, so a candidate with L == beta has gap exactly log(1/delta)
    gap = (state.beta - state.tracked[candidate_id]) + state.log_inv_delta
    return bool(gap >= 0.0), float(gap)


def crossover_flag(betas, losses, delta: float) -> bool:
    """True if the loss ever exceeded ``beta + log(1/delta)`` along a trajectory."""
    betas = np.asarray(betas, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    return bool(np.any(losses > betas + math.log(1.0 / delta)))


def replay(mixtures: Sequence[MixingDistribution], steps: Sequence, geometry: Geometry,
           delta: float, candidates: Mapping[str, np.ndarray] | None = None,
           offset: int = 0) -> list[ConfidenceState]:
    """Recompute the state after each step from a logged run."""
    state = ConfidenceState.start(delta, candidates, offset)
    history = []
    for mixing, step in zip(mixtures, steps):
        state = update(state, mixing, step, geometry)
        history.append(state)
    return history


def martingale_oracle(truth, mixing_sequence: Callable[[list], MixingDistribution],
                      steps: int, truncation_tail: float = 1e-12, intensity: float = 1.0,
                      geometry: Geometry | None = None) -> float:
    """Exact ``E[S_t(x*)]`` for a single-pixel, single-bin problem.

    Every count sequence is enumerated up to the point where the remaining
    Poisson tail of the truth and of every mixture component is below
    ``truncation_tail``. ``mixing_sequence(history)`` returns the mixture
    used to score the measurement following ``history``. The likelihood-ratio
    process is a martingale, so the result equals 1 up to truncation.
    """
    geometry = geometry or Geometry(1, 1.0)
    truth = check_image(truth, name="truth")
    if truth.shape != (1, 1) or geometry.side != 1:
        raise ValueError("martingale oracle needs a 1x1 image and a single detector bin")
    lam_true = float(mean_counts(truth, 0.0, intensity, geometry)[0])

    def expect(history: list, depth: int) -> float:
        mix = mixing_sequence(history)
        lams = np.array([mean_counts(x, 0.0, intensity, geometry)[0] for x in mix.samples])
        top = max(int(stats.poisson.isf(truncation_tail, lam)) for lam in [lam_true, *lams]) + 1
        y = np.arange(top + 1)
        log_true = poisson_logpmf(y, math.log(lam_true))
        log_comp = poisson_logpmf(y[None, :], np.log(lams)[:, None])
        log_mix = -mixture_nll(-log_comp, axis=0)
        weight = np.exp(log_true) * np.exp(log_mix - log_true)
        if depth + 1 == steps:
            return float(weight.sum())
        inner = np.array([
            expect(history + [Measurement(0.0, intensity, np.array([c]))], depth + 1)
            for c in y
        ])
        return float(np.dot(weight, inner))

    if steps < 1:
        return 1.0
    return expect([], 0)
