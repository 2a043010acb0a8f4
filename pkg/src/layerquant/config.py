"""Declarative run configuration (JSON).

Every hyperparameter is named: ``calibration.delta1``/``delta2`` are the
variance thresholds, ``calibration.budgets`` the QAO rounds per class,
``layer.rank`` the low-rank width.  The defaults are the standard benchmark,
shipped as ``benchmarks/standard-v1.json``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .harness import LongTailSpec, SyntheticModelSpec
from .lowrank import LayerBuildConfig
from .volts import DEFAULT_BUDGETS, CalibConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    depth: int = 4
    dims: list = field(default_factory=lambda: [256, 512, 512, 512, 256])
    weight_dist: dict = field(default_factory=lambda: {"kind": "gaussian", "sigma": 1.0})
    bias_dist: dict = field(default_factory=lambda: {"kind": "gaussian", "sigma": 0.02})
    layer_gains: list | None = field(default_factory=lambda: [10.0, 0.07, 1.0, 1.0])

    def to_spec(self, seed: int) -> SyntheticModelSpec:
        return SyntheticModelSpec(seed, self.depth, list(self.dims), dict(self.weight_dist), dict(self.bias_dist),
                                  None if self.layer_gains is None else list(self.layer_gains))


@dataclass
class DataSection:
    tokens: int = 64
    batch: int = 1
    base_scale: float = 0.1
    outlier_channels: int = 8
    outlier_gain: float = 100.0
    depth_drift: float = 0.0
    shift_std: float = 0.0
    scale_jitter: float = 0.3

    def to_spec(self, seed: int, channels: int) -> LongTailSpec:
        return LongTailSpec(seed=seed, channels=channels, **dataclasses.asdict(self))


@dataclass
class CalibrationSection:
    num_samples: int = 50
    delta1: float = 0.001
    delta2: float = 0.075
    budgets: dict = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    tol: float = 1e-4
    scheme: str = "three-tier"


@dataclass
class EvalSection:
    num_samples: int = 4
    range_gain: float = 1.0


@dataclass
class ReportSection:
    tokens: int = 1024


@dataclass
class BenchmarkSection:
    seed_start: int = 0
    num_seeds: int = 100
    ablation_range_gain: float = 2.0

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_start, self.seed_start + self.num_seeds))


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    layer: LayerBuildConfig = field(default_factory=lambda: LayerBuildConfig(rotation="walsh-hadamard"))
    eval: EvalSection = field(default_factory=EvalSection)
    report: ReportSection = field(default_factory=ReportSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    output: OutputSection = field(default_factory=OutputSection)

    def model_spec(self, seed: int | None = None) -> SyntheticModelSpec:
        return self.model.to_spec(self.seed if seed is None else seed)

    def data_spec(self, seed: int | None = None) -> LongTailSpec:
        return self.data.to_spec(self.seed if seed is None else seed, self.model.dims[0])

    def calib_config(self, seed: int | None = None) -> CalibConfig:
        c = self.calibration
        try:
            return CalibConfig(c.delta1, c.delta2, c.num_samples, self.seed if seed is None else seed,
                               dict(c.budgets), c.tol, c.scheme, self.layer)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def _build(cls, data, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    hints = {"model": ModelSection, "data": DataSection, "calibration": CalibrationSection,
             "layer": LayerBuildConfig, "eval": EvalSection, "report": ReportSection,
             "benchmark": BenchmarkSection, "output": OutputSection}
    for name, value in data.items():
        sub = hints.get(name) if cls is RunConfig else None
        kwargs[name] = _build(sub, value, f"{path}.{name}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(d: dict) -> RunConfig:
    cfg = _build(RunConfig, d, "")
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.version}")
    if len(cfg.model.dims) != cfg.model.depth + 1:
        raise ConfigError("model.dims must have depth + 1 entries")
    cfg.calib_config()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def standard_benchmark_text() -> str:
    return resources.files("layerquant").joinpath("benchmarks/standard-v1.json").read_text()


def standard_benchmark() -> RunConfig:
    return config_from_dict(json.loads(standard_benchmark_text()))
