"""Sequential predictors that turn the measurement history into mixing distributions.

A predictor observes one acquisition step at a time and, on request, returns
a :class:`~ctconfseq.confseq.MixingDistribution` stamped with the number of
steps it has seen. Neural predictors are out of scope; the ensemble and
smoothed predictors here are classical stand-ins that exercise the same
interface.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .confseq import MixingDistribution
from .forward import Geometry, Measurement
from .likelihood import PoissonData
from .recon import OptimizerConfig, backproject_filtered, mle, mle_batch, smooth


def _as_list(step) -> list[Measurement]:
    return [step] if isinstance(step, Measurement) else list(step)


class Predictor:
    """Base class: keeps the history and stamps predictions with the step count."""

    name = "predictor"
    k = 1

    def __init__(self, geometry: Geometry):
        self.geometry = geometry
        self.n_steps = 0
        self.history: list[Measurement] = []

    def observe(self, step) -> None:
        ms = _as_list(step)
        self.history.extend(ms)
        self.n_steps += 1
        self._observe(ms)

    def _observe(self, ms: list[Measurement]) -> None:
        pass

    def predict(self) -> MixingDistribution:
        return MixingDistribution(self.samples(), self.n_steps)

    def samples(self) -> np.ndarray:
        raise NotImplementedError


class FBPPredictor(Predictor):
    """Point prediction at the filtered backprojection of all data so far.

    Backprojections are accumulated incrementally, so each step costs one
    filtered backprojection regardless of history length.
    """

    name = "fbp"

    def __init__(self, geometry: Geometry):
        super().__init__(geometry)
        self._acc = np.zeros(geometry.side ** 2)
        self._n_meas = 0

    def _observe(self, ms):
        self._acc += backproject_filtered(ms, self.geometry)
        self._n_meas += len(ms)

    def image(self) -> np.ndarray:
        side = self.geometry.side
        if self._n_meas == 0:
            return np.zeros((side, side))
        return np.clip(self._acc * (np.pi / self._n_meas), 0.0, 1.0).reshape(side, side)

    def samples(self):
        return self.image()[None]


class MLEPredictor(Predictor):
    """Point prediction at an approximate MLE started from the current FBP."""

    name = "mle"

    def __init__(self, geometry: Geometry, config: OptimizerConfig = OptimizerConfig()):
        super().__init__(geometry)
        self.config = config
        self.data = PoissonData(geometry)
        self._fbp = FBPPredictor(geometry)
        self._cached: tuple[int, np.ndarray] | None = None

    def _observe(self, ms):
        self.data.extend(ms)
        self._fbp._observe(ms)

    def initial(self) -> np.ndarray:
        return self._fbp.image()

    def _fresh(self) -> bool:
        return self._cached is not None and self._cached[0] == self.n_steps

    def _store(self, x: np.ndarray) -> None:
        self._cached = (self.n_steps, x)

    def image(self) -> np.ndarray:
        if len(self.data) == 0:
            return self.initial()
        if not self._fresh():
            self._store(mle(self.data, self.initial(), self.config))
        return self._cached[1]

    def samples(self):
        return self.image()[None]


class JitteredMLEPredictor(MLEPredictor):
    """One ensemble member: MLE from a jittered FBP start, then member-specific smoothing.

    Both the jitter and the smoothing strength are drawn from ``seed``, so
    members with equal seeds produce identical images.
    """

    name = "mle_member"

    def __init__(self, geometry: Geometry, seed: int, config: OptimizerConfig = OptimizerConfig(),
                 jitter: float = 0.02, max_smoothing: float = 1.0):
        super().__init__(geometry, config)
        self.seed = int(seed)
        self.jitter = jitter
        self.smoothing = float(np.random.default_rng([self.seed, 0]).uniform(0.0, max_smoothing))

    def initial(self):
        base = self._fbp.image()
        rng = np.random.default_rng([self.seed, 1, self.n_steps])
        return np.clip(base + rng.normal(0.0, self.jitter, size=base.shape), 0.0, 1.0)

    def image(self):
        return smooth(super().image(), self.smoothing)


class EnsemblePredictor(Predictor):
    """Uniform mixture over member predictions."""

    name = "ensemble"

    def __init__(self, members: Sequence[Predictor]):
        if len(members) < 1:
            raise ValueError("ensemble needs at least one member")
        super().__init__(members[0].geometry)
        self.members = list(members)
        self.k = sum(m.k for m in self.members)

    def _observe(self, ms):
        for member in self.members:
            member.observe(ms)

    def samples(self):
        return np.concatenate([m.samples() for m in self.members])


class MeanPredictor(Predictor):
    """Point mass at the mean of another predictor's samples."""

    def __init__(self, base: Predictor):
        super().__init__(base.geometry)
        self.base = base
        self.name = f"{base.name}_mean"

    def _observe(self, ms):
        self.base.observe(ms)

    def samples(self):
        return self.base.samples().mean(axis=0, keepdims=True)


class SmoothedPredictor(Predictor):
    """Gaussian-smoothed version of another predictor's samples."""

    def __init__(self, base: Predictor, sigma: float):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        super().__init__(base.geometry)
        self.base = base
        self.sigma = float(sigma)
        self.k = base.k
        self.name = f"smoothed_{base.name}"

    def _observe(self, ms):
        self.base.observe(ms)

    def samples(self):
        return np.stack([smooth(x, self.sigma) for x in self.base.samples()])


class StaticPredictor(Predictor):
    """Always predicts the same fixed images (useful as an oracle or a stress test)."""

    name = "static"

    def __init__(self, geometry: Geometry, images):
        super().__init__(geometry)
        arr = np.asarray(images, dtype=np.float64)
        self._images = arr[None] if arr.ndim == 2 else arr
        self.k = self._images.shape[0]

    def samples(self):
        return self._images.copy()


def ensemble_predictor(geometry: Geometry, seeds: Sequence[int],
                       config: OptimizerConfig = OptimizerConfig(), jitter: float = 0.02,
                       max_smoothing: float = 1.0) -> EnsemblePredictor:
    if len(seeds) < 2:
        raise ValueError("an ensemble needs K >= 2 members")
    return EnsemblePredictor([
        JitteredMLEPredictor(geometry, s, config, jitter, max_smoothing) for s in seeds
    ])


def smoothed_predictor(base: Predictor, sigma: float) -> SmoothedPredictor:
    return SmoothedPredictor(base, sigma)


PREDICTORS: dict[str, Callable[..., Predictor]] = {
    "fbp": lambda g, **kw: FBPPredictor(g),
    "mle": lambda g, config=OptimizerConfig(), **kw: MLEPredictor(g, config),
    "smoothed_fbp": lambda g, sigma=1.0, **kw: SmoothedPredictor(FBPPredictor(g), sigma),
    "smoothed_mle": lambda g, sigma=1.0, config=OptimizerConfig(), **kw:
        SmoothedPredictor(MLEPredictor(g, config), sigma),
    "ensemble": lambda g, seeds=tuple(range(8)), config=OptimizerConfig(), **kw:
        ensemble_predictor(g, seeds, config),
    "ensemble_mean": lambda g, seeds=tuple(range(8)), config=OptimizerConfig(), **kw:
        MeanPredictor(ensemble_predictor(g, seeds, config)),
}


def _mle_leaves(predictor: Predictor):
    if isinstance(predictor, MLEPredictor):
        yield predictor
    elif isinstance(predictor, EnsemblePredictor):
        for member in predictor.members:
            yield from _mle_leaves(member)
    elif isinstance(predictor, (MeanPredictor, SmoothedPredictor)):
        yield from _mle_leaves(predictor.base)


def predict_many(predictors: Sequence[Predictor]) -> list[MixingDistribution]:
    """``[p.predict() for p in predictors]`` with MLE solves batched across predictors.

    MLE leaves that share an angle sequence and optimiser settings are solved
    together; results are identical to predicting one at a time.
    """
    groups: dict = {}
    seen = set()
    for p in predictors:
        for leaf in _mle_leaves(p):
            if len(leaf.data) == 0 or leaf._fresh() or id(leaf) in seen:
                continue
            seen.add(id(leaf))
            key = (leaf.geometry, leaf.config, tuple(m.angle for m in leaf.data.measurements))
            groups.setdefault(key, []).append(leaf)
    for (_, config, _), leaves in groups.items():
        images = mle_batch([leaf.data for leaf in leaves], [leaf.initial() for leaf in leaves], config)
        for leaf, x in zip(leaves, images):
            leaf._store(x)
    return [p.predict() for p in predictors]


def make_predictor(name: str, geometry: Geometry, **options) -> Predictor:
    if name not in PREDICTORS:
        raise ValueError(f"unknown predictor {name!r}; choose from {sorted(PREDICTORS)}")
    return PREDICTORS[name](geometry, **options)
