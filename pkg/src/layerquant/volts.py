"""Variance-guided layer sensitivity and QAO budget allocation.

The calibration pass records, for every linear layer, the mean of its input
activation for each calibration sample.  The population variance of those
means across samples decides how many QAO rounds the layer gets:
``[0, delta1)`` frozen (1 round), ``[delta1, delta2)`` light (30 rounds),
``[delta2, inf)`` full (until convergence, capped at 200).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .lowrank import LayerBuildConfig, build_layer
from .stack import LinearStack, QuantizedStack
from .tensor import DimensionError, as_actbatch

CLASSES = ("frozen", "light", "full")
DEFAULT_BUDGETS = {"frozen": 1, "light": 30, "full": 200}
SCHEMES = ("three-tier", "uniform-light", "uniform-full", "frozen+light", "frozen+full")


class CalibrationError(RuntimeError):
    """Numeric failure during calibration; messages name the offending layer."""


@dataclass
class CalibConfig:
    delta1: float = 0.001
    delta2: float = 0.075
    num_samples: int = 50
    seed: int = 0
    budgets: dict = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    tol: float = 1e-4
    scheme: str = "three-tier"
    layer: LayerBuildConfig = field(default_factory=LayerBuildConfig)

    def __post_init__(self):
        if not 0 <= self.delta1 < self.delta2:
            raise ValueError(f"need 0 <= delta1 < delta2, got {self.delta1}, {self.delta2}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        missing = set(CLASSES) - set(self.budgets)
        if missing:
            raise ValueError(f"budgets missing classes: {sorted(missing)}")


def channel_mean(x) -> float:
    """Channel-averaged activation, further averaged over batch and tokens."""
    return float(np.mean(as_actbatch(x)))


@dataclass
class LayerStat:
    layer_id: str
    per_sample_mu: dict = field(default_factory=dict)

    def add(self, sample_index: int, mu: float) -> None:
        self.per_sample_mu[int(sample_index)] = float(mu)

    def values(self) -> np.ndarray:
        return np.array([self.per_sample_mu[k] for k in sorted(self.per_sample_mu)])


def layer_variance(stat: LayerStat) -> float:
    mu = stat.values()
    if mu.size < 2:
        raise CalibrationError(f"{stat.layer_id}: variance requires ≥ 2 samples, got {mu.size}")
    if not np.all(np.isfinite(mu)):
        raise CalibrationError(f"{stat.layer_id}: non-finite activation statistics")
    return float(np.mean((mu - mu.mean()) ** 2))


@dataclass
class LayerSensitivity:
    layer_id: str
    variance: float
    cls: str
    budget_rounds: int

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "variance": self.variance,
            "class": self.cls,
            "budget_rounds": self.budget_rounds,
        }


@dataclass
class SensitivityReport:
    entries: list[LayerSensitivity]

    def __getitem__(self, layer_id: str) -> LayerSensitivity:
        for e in self.entries:
            if e.layer_id == layer_id:
                return e
        raise KeyError(layer_id)

    @property
    def total_rounds(self) -> int:
        return sum(e.budget_rounds for e in self.entries)

    def class_counts(self) -> dict:
        return {c: sum(e.cls == c for e in self.entries) for c in CLASSES}

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2) + "\n"

    @classmethod
    def from_list(cls, rows) -> "SensitivityReport":
        return cls([LayerSensitivity(r["layer_id"], float(r["variance"]), r["class"], int(r["budget_rounds"])) for r in rows])

    def table(self) -> str:
        rows = sorted(self.entries, key=lambda e: (-e.variance, e.layer_id))
        lines = [f"{'layer':<10} {'variance':>14} {'class':<7} {'rounds':>6}"]
        lines += [f"{e.layer_id:<10} {e.variance:>14.6g} {e.cls:<7} {e.budget_rounds:>6d}" for e in rows]
        return "\n".join(lines) + "\n"


def _class_of(var: float, cfg: CalibConfig) -> str:
    if var < cfg.delta1:
        return "frozen"
    if var < cfg.delta2:
        return "light"
    return "full"


def classify(variances: dict, cfg: CalibConfig) -> SensitivityReport:
    entries = []
    for lid, var in variances.items():
        cls = _class_of(float(var), cfg)
        entries.append(LayerSensitivity(lid, float(var), cls, int(cfg.budgets[cls])))
    return SensitivityReport(entries)


def uniform_report(layer_ids, rounds: int) -> SensitivityReport:
    """Same QAO budget for every layer, no statistics (class ``"uniform"``)."""
    return SensitivityReport([LayerSensitivity(lid, float("nan"), "uniform", int(rounds)) for lid in layer_ids])


def _remap(cls: str, scheme: str) -> str:
    if scheme == "three-tier":
        return cls
    if scheme == "uniform-light":
        return "light"
    if scheme == "uniform-full":
        return "full"
    if scheme == "frozen+light":
        return cls if cls == "frozen" else "light"
    if scheme == "frozen+full":
        return cls if cls == "frozen" else "full"
    raise ValueError(f"unknown scheme {scheme!r}")


def ablation_scheme(report: SensitivityReport, scheme: str, budgets: dict | None = None) -> SensitivityReport:
    """Reassign classes per an ablation arm; variances are kept as measured."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    budgets = DEFAULT_BUDGETS if budgets is None else budgets
    out = []
    for e in report.entries:
        cls = _remap(e.cls, scheme)
        out.append(LayerSensitivity(e.layer_id, e.variance, cls, int(budgets[cls])))
    return SensitivityReport(out)


def collect_stats(model: LinearStack, dataset) -> tuple[dict, list[np.ndarray]]:
    """One FP forward pass per sample; returns per-layer stats and stacked layer inputs.

    The stacked inputs are ``(total_tokens, C)`` matrices used to fit static
    activation quantizers.
    """
    if len(model) == 0:
        raise DimensionError("cannot calibrate an empty model")
    if len(dataset) == 0:
        raise DimensionError("calibration dataset is empty")
    stats = {lid: LayerStat(lid) for lid in model.layer_ids}
    collected = [[] for _ in range(len(model))]
    for k, sample in enumerate(dataset):
        sample = as_actbatch(sample, f"sample {k}")
        if sample.shape[-1] != model.dims[0]:
            raise DimensionError(f"sample {k} has {sample.shape[-1]} channels, model expects {model.dims[0]}")
        _, inputs = model.forward(sample, collect=True)
        for i, x in enumerate(inputs):
            stats[model.layer_ids[i]].add(k, channel_mean(x))
            collected[i].append(x.reshape(-1, x.shape[-1]))
    return stats, [np.concatenate(c, axis=0) for c in collected]


def layer_build_config(base: LayerBuildConfig, entry: LayerSensitivity, tol: float) -> LayerBuildConfig:
    return base.replace(qao_rounds=entry.budget_rounds, tol=tol if entry.cls == "full" else None)


def quantize_model(
    model: LinearStack,
    report: SensitivityReport,
    layer_cfg: LayerBuildConfig,
    tol: float = 1e-4,
    calib_inputs=None,
    cache: dict | None = None,
) -> QuantizedStack:
    """Build every layer with the QAO budget assigned in ``report``.

    ``cache`` (optional) memoises builds keyed by layer and build config, so
    ablation arms sharing a budget do not repeat the work.
    """
    layers = []
    for i, (lid, (w, b)) in enumerate(zip(model.layer_ids, model.layers)):
        cfg = layer_build_config(layer_cfg, report[lid], tol)
        key = (i, tuple(sorted(asdict(cfg).items())))
        if cache is not None and key in cache:
            layers.append(cache[key])
            continue
        try:
            layer = build_layer(w, b, cfg, X_calib=None if calib_inputs is None else calib_inputs[i])
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise CalibrationError(f"{lid}: {exc}") from exc
        if cache is not None:
            cache[key] = layer
        layers.append(layer)
    return QuantizedStack(layers)


def sensitivity_report(stats: dict, cfg: CalibConfig) -> SensitivityReport:
    variances = {lid: layer_variance(stat) for lid, stat in stats.items()}
    return ablation_scheme(classify(variances, cfg), cfg.scheme, cfg.budgets)


def calibrate_model(model: LinearStack, dataset, cfg: CalibConfig) -> tuple[QuantizedStack, SensitivityReport]:
    stats, inputs = collect_stats(model, dataset)
    report = sensitivity_report(stats, cfg)
    qmodel = quantize_model(model, report, cfg.layer, cfg.tol, calib_inputs=inputs)
    return qmodel, report


class VoltsCalibrator(BaseEstimator):
    """Estimator wrapper around ``calibrate_model``.

    ``fit(model, dataset)`` stores ``report_``, ``stats_`` and
    ``quantized_model_``; ``transform`` runs the quantized model.
    """

    def __init__(self, delta1=0.001, delta2=0.075, budgets=None, tol=1e-4, scheme="three-tier", layer_config=None):
        self.delta1 = delta1
        self.delta2 = delta2
        self.budgets = budgets
        self.tol = tol
        self.scheme = scheme
        self.layer_config = layer_config

    def _config(self) -> CalibConfig:
        return CalibConfig(
            delta1=self.delta1,
            delta2=self.delta2,
            budgets=dict(DEFAULT_BUDGETS if self.budgets is None else self.budgets),
            tol=self.tol,
            scheme=self.scheme,
            layer=self.layer_config or LayerBuildConfig(),
        )

    def fit(self, model: LinearStack, dataset):
        cfg = self._config()
        self.stats_, inputs = collect_stats(model, dataset)
        self.report_ = sensitivity_report(self.stats_, cfg)
        self.quantized_model_ = quantize_model(model, self.report_, cfg.layer, cfg.tol, calib_inputs=inputs)
        return self

    def transform(self, X):
        return self.quantized_model_.transform(X)
