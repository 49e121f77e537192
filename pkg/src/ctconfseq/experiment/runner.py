"""Sparse and dense acquisition protocols driving the confidence sequence.

Runs are executed in lockstep so that MLE solves for runs sharing an angle
sequence can be batched; each run's arithmetic is identical to running it
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..confseq import ConfidenceState, MixingDistribution, crossover_flag, membership, update
from ..forward import Geometry, Measurement, downsample, simulate_step, step_seed
from ..likelihood import PoissonData
from ..metrics import psnr
from ..phantoms import FAMILIES, make_phantom, rotate_image
from ..predictors import Predictor, make_predictor, predict_many
from .config import RunConfig

TRUTH = "truth"


def rotation_id(angle: float) -> str:
    return f"rot{angle:g}"


def ground_truth(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """High-resolution (``2r``) phantom used for simulation and its ``r`` block average."""
    hi = make_phantom(cfg.family, 2 * cfg.side, cfg.phantom)
    return hi, downsample(hi, 2)


def simulate_measurements(cfg: RunConfig, truth_highres=None) -> list[list[Measurement]]:
    """Every acquisition step of ``cfg``; independent of the predictor."""
    if truth_highres is None:
        truth_highres = ground_truth(cfg)[0]
    geometry = Geometry(cfg.side)
    plan = cfg.plan()
    fam = FAMILIES.index(cfg.family)
    return [
        [simulate_step(truth_highres, angle, plan.step_intensity(t),
                       step_seed(cfg.seed, fam, cfg.phantom, t, j), geometry)
         for j, angle in enumerate(plan.step_angles(t))]
        for t in range(plan.n_steps)
    ]


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    truth: np.ndarray
    candidates: dict
    steps: list
    states: list
    final_samples: np.ndarray
    sample_flag_rates: list = field(default_factory=list)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.config.side)

    @property
    def final_state(self) -> ConfidenceState:
        return self.states[-1]

    @property
    def confidence_steps(self) -> list:
        return self.steps[self.config.warmup:]

    @property
    def confidence_measurements(self) -> list[Measurement]:
        return [m for step in self.confidence_steps for m in step]

    @property
    def betas(self) -> np.ndarray:
        return np.array([s.beta for s in self.states])

    def losses(self, cid: str = TRUTH) -> np.ndarray:
        return np.array([s.tracked[cid] for s in self.states])

    @property
    def prediction(self) -> np.ndarray:
        """Mean of the final mixing distribution (built from all data)."""
        return self.final_samples.mean(axis=0)

    def crossed(self, delta: float | None = None, cid: str = TRUTH) -> bool:
        return crossover_flag(self.betas, self.losses(cid), self.config.delta if delta is None else delta)

    def final_gap(self, cid: str = TRUTH) -> float:
        """``beta_T - L_T(candidate)`` at the last step."""
        s = self.final_state
        return float(s.beta - s.tracked[cid])

    def excluded(self, cid: str) -> bool:
        return not membership(self.final_state, cid)[0]

    def trajectory_rows(self) -> list[dict]:
        rows = []
        ids = list(self.candidates)
        for i, s in enumerate(self.states):
            row = {"step": s.step, "beta": s.beta, "increment": s.last_increment,
                   "threshold": s.threshold}
            for cid in ids:
                row[f"L_{cid}"] = s.tracked[cid]
            for cid in ids:
                row[f"gap_{cid}"] = membership(s, cid)[1]
            if self.sample_flag_rates:
                row["sample_flag_rate"] = self.sample_flag_rates[i]
            rows.append(row)
        return rows

    def metrics_row(self) -> dict:
        cfg = self.config
        row = {
            "family": cfg.family, "phantom": cfg.phantom,
            "intensity": cfg.total_intensity if cfg.mode == "sparse" else cfg.dense_last,
            "method": cfg.predictor, "seed": cfg.seed, "mode": cfg.mode, "delta": cfg.delta,
            "steps": self.final_state.step, "crossover": self.crossed(),
            "final_beta": self.final_state.beta, "final_L_truth": self.final_state.tracked[TRUTH],
            "final_gap": self.final_gap(), "psnr": psnr(self.prediction, self.truth),
        }
        for a in cfg.rotations:
            row[f"excluded_{rotation_id(a)}"] = self.excluded(rotation_id(a))
        if self.sample_flag_rates:
            row["sample_flag_rate"] = self.sample_flag_rates[-1]
        return row


class _Run:
    def __init__(self, cfg: RunConfig, steps: Sequence[Sequence[Measurement]] | None = None):
        self.cfg = cfg
        self.geometry = Geometry(cfg.side)
        self.plan = cfg.plan()
        hi, self.truth = ground_truth(cfg)
        if steps is None:
            steps = simulate_measurements(cfg, hi)
        self.steps = [list(s) for s in steps]
        if len(self.steps) != self.plan.n_steps:
            raise ValueError(f"measurement log has {len(self.steps)} steps, plan needs {self.plan.n_steps}")
        self.candidates = {TRUTH: self.truth}
        for a in cfg.rotations:
            self.candidates[rotation_id(a)] = rotate_image(self.truth, a)
        self.predictor: Predictor = make_predictor(cfg.predictor, self.geometry, **cfg.predictor_options())
        self.state = ConfidenceState.start(cfg.delta, self.candidates, offset=cfg.warmup)
        self.states: list[ConfidenceState] = []
        self.flag_rates: list[float] = []
        self.scored = PoissonData(self.geometry) if cfg.check_samples else None
        for t in range(cfg.warmup):
            self.predictor.observe(self.steps[t])
        self.t = cfg.warmup

    @property
    def done(self) -> bool:
        return self.t >= self.plan.n_steps

    def _check(self, mixing: MixingDistribution):
        if self.scored is not None and self.states:
            losses = self.scored.nll_many(mixing.samples)
            self.flag_rates.append(float(np.mean(losses > self.state.threshold)))

    def advance(self, mixing: MixingDistribution) -> None:
        self._check(mixing)
        ms = self.steps[self.t]
        self.state = update(self.state, mixing, ms, self.geometry)
        self.states.append(self.state)
        if self.scored is not None:
            self.scored.extend(ms)
        self.predictor.observe(ms)
        self.t += 1

    def finish(self, mixing: MixingDistribution) -> RunResult:
        self._check(mixing)
        return RunResult(self.cfg, self.truth, self.candidates, self.steps, self.states,
                         np.array(mixing.samples), self.flag_rates)


def run_many(configs: Sequence[RunConfig], logs: Sequence | None = None,
             batch_size: int = 64) -> list[RunResult]:
    """Execute runs in lockstep groups of ``batch_size``; results follow ``configs`` order."""
    configs = list(configs)
    if logs is not None and len(logs) != len(configs):
        raise ValueError("need one measurement log per config")
    results: list[RunResult] = []
    for lo in range(0, len(configs), batch_size):
        runs = [_Run(c, None if logs is None else logs[lo + i])
                for i, c in enumerate(configs[lo:lo + batch_size])]
        while True:
            active = [r for r in runs if not r.done]
            if not active:
                break
            for r, mix in zip(active, predict_many([r.predictor for r in active])):
                r.advance(mix)
        finals = predict_many([r.predictor for r in runs])
        results.extend(r.finish(mix) for r, mix in zip(runs, finals))
    return results


def run_sparse(cfg: RunConfig) -> RunResult:
    if cfg.mode != "sparse":
        raise ValueError("run_sparse needs a sparse config")
    return run_many([cfg])[0]


def run_dense(cfg: RunConfig) -> RunResult:
    if cfg.mode != "dense":
        raise ValueError("run_dense needs a dense config")
    return run_many([cfg])[0]


def run(cfg: RunConfig) -> RunResult:
    return run_many([cfg])[0]


def replay_run(cfg: RunConfig, steps: Sequence[Sequence[Measurement]]) -> RunResult:
    """Recompute a run from its measurement log alone (predictors are deterministic)."""
    return run_many([cfg], [steps])[0]
