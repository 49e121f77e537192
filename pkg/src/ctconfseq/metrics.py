"""Scalar evaluation metrics: PSNR, error rates, interval quality, AUSE, calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .confseq import ConfidenceState, crossover_flag, membership


@dataclass(frozen=True)
class Rate:
    """Empirical frequency with its binomial standard error."""

    value: float
    sem: float
    n: int

    def within(self, target: float, n_sem: float = 3.0) -> bool:
        return self.value <= target + n_sem * self.sem


def _pair(a, b, what="images"):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what} must have matching shapes, got {a.shape} and {b.shape}")
    return a, b


def psnr(recon, truth) -> float:
    """``10 log10(1 / MSE)`` with peak 1; ``inf`` for identical images."""
    x, y = _pair(recon, truth)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def binomial_rate(flags) -> Rate:
    f = np.asarray(flags, dtype=bool).ravel()
    if f.size == 0:
        raise ValueError("need at least one run")
    p = float(f.mean())
    return Rate(p, math.sqrt(p * (1.0 - p) / f.size), int(f.size))


def crossover_rate(flags) -> Rate:
    """Fraction of runs in which the truth ever left the confidence set."""
    return binomial_rate(flags)


def exclusion_rate(final_states: Sequence[ConfidenceState],
                   candidates: Mapping[float, str]) -> dict[float, Rate]:
    """Per rotation angle, the fraction of runs whose rotated truth is outside the final set.

    ``candidates`` maps each rotation angle to the tracked candidate id.
    """
    if not final_states:
        raise ValueError("need at least one run")
    out = {}
    for angle, cid in candidates.items():
        out[angle] = binomial_rate([not membership(s, cid)[0] for s in final_states])
    return out


def coverage_and_width(intervals, truth) -> tuple[float, float]:
    lower, upper = _pair(intervals.lower, intervals.upper, "interval bounds")
    _, x = _pair(lower, truth)
    covered = (lower <= x) & (x <= upper)
    return float(covered.mean()), float(np.mean(upper - lower))


def _sparsification(error: np.ndarray, order: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    # mean error of the pixels that remain after removing the first ``f`` of ``order``
    ranked = error[order]
    n = ranked.size
    tail = np.concatenate((np.cumsum(ranked[::-1])[::-1], [0.0]))
    removed = np.floor(fractions * n + 1e-9).astype(np.int64)
    keep = n - removed
    return np.where(keep > 0, tail[removed] / np.maximum(keep, 1), 0.0)


def sparsification_curves(uncertainty, error, step: float = 0.01):
    """Uncertainty-ordered and oracle sparsification curves, normalised by the full MAE."""
    u, e = _pair(uncertainty, error, "uncertainty and error maps")
    u, e = u.ravel(), np.abs(e.ravel())
    fractions = np.arange(0.0, 1.0, step)
    total = e.mean()
    if total == 0.0:
        zeros = np.zeros_like(fractions)
        return fractions, zeros, zeros
    # stable sorts keep tie handling deterministic
    by_u = np.argsort(-u, kind="stable")
    by_e = np.argsort(-e, kind="stable")
    return (fractions, _sparsification(e, by_u, fractions) / total,
            _sparsification(e, by_e, fractions) / total)


def ause(uncertainty, error, step: float = 0.01) -> float:
    """Mean gap between the uncertainty-ordered and oracle sparsification curves."""
    _, curve, oracle = sparsification_curves(uncertainty, error, step)
    return float(np.mean(curve - oracle))


DEFAULT_DELTAS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


def calibration_curve(trajectories, deltas: Sequence[float] = DEFAULT_DELTAS) -> list[tuple[float, Rate]]:
    """Crossover rate recomputed from stored ``(betas, losses)`` trajectories for each delta."""
    runs = [(np.asarray(b, dtype=np.float64), np.asarray(l, dtype=np.float64)) for b, l in trajectories]
    if not runs:
        raise ValueError("need at least one stored trajectory")
    return [(float(d), crossover_rate([crossover_flag(b, l, d) for b, l in runs])) for d in deltas]


@dataclass(frozen=True)
class HallucinationReport:
    flag_rates: tuple
    flags: tuple
    psnrs: tuple
    psnr_in: float | None
    psnr_out: float | None

    @property
    def flag_rate(self) -> float:
        """Out-of-set fraction at the final step."""
        return self.flag_rates[-1]

    @property
    def n_out(self) -> int:
        return int(sum(self.flags))

    @property
    def n_in(self) -> int:
        return len(self.flags) - self.n_out


def hallucination_report(samples, losses, threshold, truth) -> HallucinationReport:
    """Flag samples outside the confidence set and compare PSNR of the two groups.

    ``losses`` holds ``L_t`` of every sample, either ``(N,)`` for one step or
    ``(T, N)`` for a history, with ``threshold`` a scalar, a per-step vector
    or a :class:`ConfidenceState`. Flags and the PSNR split use the last step.
    A group with no members reports ``None``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    ells = np.atleast_2d(np.asarray(losses, dtype=np.float64))
    if ells.shape[1] != x.shape[0]:
        raise ValueError("need one loss per sample")
    if isinstance(threshold, ConfidenceState):
        threshold = threshold.threshold
    thr = np.broadcast_to(np.asarray(threshold, dtype=np.float64), (ells.shape[0],))
    out = ells > thr[:, None]
    scores = [psnr(xk, truth) for xk in x]
    final = out[-1]

    def mean_or_none(group):
        return float(np.mean(group)) if group else None

    return HallucinationReport(
        flag_rates=tuple(float(r) for r in out.mean(axis=1)),
        flags=tuple(bool(f) for f in final),
        psnrs=tuple(scores),
        psnr_in=mean_or_none([s for s, f in zip(scores, final) if not f]),
        psnr_out=mean_or_none([s for s, f in zip(scores, final) if f]),
    )
