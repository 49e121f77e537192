"""Run configuration: a versioned JSON schema with field-level validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..forward import AcquisitionPlan, dense_plan, sparse_plan
from ..phantoms import FAMILIES
from ..predictors import PREDICTORS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    mode: str = "sparse"
    family: str = "ellipses"
    phantom: int = 0
    seed: int = 0
    side: int = 64
    predictor: str = "mle"
    delta: float = 0.05
    # sparse protocol
    total_intensity: float = 1e6
    n_angles: int = 50
    warmup: int = 5
    schedule: str = "golden"
    # dense protocol
    dense_angles: int = 200
    dense_steps: int = 30
    dense_first: float = 1e4
    dense_last: float = 1e9
    # predictor options
    mle_steps: int = 100
    learning_rate: float = 1e-2
    ensemble_size: int = 8
    smoothing: float = 1.0
    # extra candidates tracked from the first step
    rotations: tuple = (1.0, 2.0, 4.0, 8.0)
    check_samples: bool = False
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "rotations", tuple(float(a) for a in self.rotations))
        validate(self)

    @property
    def label(self) -> str:
        if self.mode == "sparse":
            level = f"I{self.total_intensity:.0e}"
        else:
            level = f"dense{self.dense_steps}"
        return f"{self.family}-{self.phantom}_{level}_{self.predictor}_s{self.seed}"

    def plan(self) -> AcquisitionPlan:
        if self.mode == "sparse":
            return sparse_plan(self.n_angles, self.total_intensity, self.side, self.warmup,
                               self.schedule, self.seed)
        return dense_plan(self.dense_angles, self.dense_steps, self.dense_first, self.dense_last,
                          self.warmup)

    def predictor_options(self) -> dict:
        from ..recon import OptimizerConfig
        opts = {"config": OptimizerConfig(steps=self.mle_steps, learning_rate=self.learning_rate)}
        if self.predictor.startswith("smoothed"):
            opts["sigma"] = self.smoothing
        if self.predictor.startswith("ensemble"):
            opts["seeds"] = tuple(range(self.ensemble_size))
        return opts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rotations"] = list(self.rotations)
        return d

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def _require(cond: bool, name: str, message: str):
    if not cond:
        raise ConfigError(name, message)


def validate(cfg: RunConfig) -> None:
    _require(cfg.schema_version == SCHEMA_VERSION, "schema_version",
             f"unsupported version {cfg.schema_version}, expected {SCHEMA_VERSION}")
    _require(cfg.mode in ("sparse", "dense"), "mode", "must be 'sparse' or 'dense'")
    _require(cfg.family in FAMILIES, "family", f"must be one of {', '.join(FAMILIES)}")
    _require(cfg.predictor in PREDICTORS, "predictor", f"must be one of {', '.join(sorted(PREDICTORS))}")
    _require(isinstance(cfg.side, int) and cfg.side >= 16, "side", "must be an integer >= 16")
    _require(isinstance(cfg.phantom, int) and cfg.phantom >= 0, "phantom", "must be a non-negative integer")
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    _require(0.0 < cfg.delta < 1.0, "delta", "must lie in (0, 1)")
    _require(cfg.total_intensity > 0, "total_intensity", "must be positive")
    _require(cfg.schedule in ("golden", "uniform"), "schedule", "must be 'golden' or 'uniform'")
    _require(cfg.warmup >= 0, "warmup", "must be non-negative")
    if cfg.mode == "sparse":
        _require(cfg.n_angles > cfg.warmup, "n_angles", "must exceed warmup")
    else:
        _require(cfg.dense_angles >= 1, "dense_angles", "must be at least 1")
        _require(cfg.dense_steps > cfg.warmup, "dense_steps", "must exceed warmup")
        _require(0 < cfg.dense_first <= cfg.dense_last, "dense_first",
                 "must be positive and not above dense_last")
    _require(cfg.mle_steps >= 1, "mle_steps", "must be at least 1")
    _require(cfg.learning_rate > 0, "learning_rate", "must be positive")
    _require(cfg.ensemble_size >= 2, "ensemble_size", "must be at least 2")
    _require(cfg.smoothing >= 0, "smoothing", "must be non-negative")
    _require(all(abs(a) <= 45 for a in cfg.rotations), "rotations", "angles must satisfy |angle| <= 45")


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def config_from_dict(d: dict) -> RunConfig:
    unknown = sorted(set(d) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    defaults = {f.name: f.default for f in fields(RunConfig)}
    for name, value in d.items():
        expected = type(defaults[name])
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if expected is tuple and isinstance(value, list):
            value = tuple(value)
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ConfigError(name, f"expected {expected.__name__}, got {type(value).__name__}")
    try:
        return RunConfig(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SweepConfig:
    """Cartesian grid of run configurations over a shared base."""

    base: RunConfig = field(default_factory=RunConfig)
    families: tuple = ("ellipses",)
    phantoms: tuple = (0,)
    intensities: tuple = (1e6,)
    predictors: tuple = ("fbp", "mle")
    seeds: tuple = (0,)
    workers: int = 1

    def __post_init__(self):
        for name in ("families", "phantoms", "intensities", "predictors", "seeds"):
            values = tuple(getattr(self, name))
            object.__setattr__(self, name, values)
            if not values:
                raise ConfigError(name, "must not be empty")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        for cfg in self.cells():
            validate(cfg)

    def cells(self) -> list[RunConfig]:
        return [
            replace(self.base, family=f, phantom=int(p), total_intensity=float(i), predictor=m, seed=int(s))
            for f in self.families for p in self.phantoms for i in self.intensities
            for m in self.predictors for s in self.seeds
        ]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "base": self.base.to_dict(),
            "families": list(self.families), "phantoms": list(self.phantoms),
            "intensities": list(self.intensities), "predictors": list(self.predictors),
            "seeds": list(self.seeds), "workers": self.workers,
        }


def sweep_from_dict(d: dict) -> SweepConfig:
    d = dict(d)
    version = d.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    allowed = {"base", "families", "phantoms", "intensities", "predictors", "seeds", "workers"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    base = config_from_dict(d.pop("base", {}))
    try:
        return SweepConfig(base=base, **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
    except TypeError as exc:
        raise ConfigError("sweep", str(exc)) from exc


def load_sweep(path) -> SweepConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"not valid JSON: {exc}") from exc
    return sweep_from_dict(data)
