"""Benchmark pipelines and the ablation axes built on the synthetic harness.

All runs are pure functions of ``(RunConfig, seed)``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .harness import ErrorMetrics, eval_model_error, gen_dataset, gen_model, match_range
from .lowrank import LayerBuildConfig
from .quantizers import make_act_quantizer, StaticChannelQuantizer
from .rotation import rotate_input
from .stack import LinearStack, QuantizedStack
from .volts import (
    SensitivityReport,
    ablation_scheme,
    classify,
    collect_stats,
    layer_variance,
    quantize_model,
    uniform_report,
)

AXES = {
    "activation-scaling": ("No scaling", "Calibrated Scaling", "DRAQ"),
    "qao": ("No QAO", "With QAO"),
    "sensitivity-scheme": ("uniform-light", "uniform-full", "frozen+light", "frozen+full", "three-tier"),
}
_ACT_ARMS = {"No scaling": "token", "Calibrated Scaling": "static", "DRAQ": "draq"}


def fp_model(cfg: RunConfig, seed: int) -> LinearStack:
    return gen_model(cfg.model_spec(seed))


def calibration_set(cfg: RunConfig, seed: int) -> list:
    return gen_dataset(cfg.data_spec(seed), cfg.calibration.num_samples, stream="calib")


def eval_set(cfg: RunConfig, seed: int, range_gain: float | None = None) -> list:
    gain = cfg.eval.range_gain if range_gain is None else range_gain
    return gen_dataset(cfg.data_spec(seed), cfg.eval.num_samples, stream="eval", range_gain=gain)


def wide_range_eval_set(cfg: RunConfig, seed: int, calib_inputs, factor: float | None = None) -> list:
    """Eval samples rescaled to ``factor`` x the calibration peak (first-layer inputs)."""
    factor = cfg.benchmark.ablation_range_gain if factor is None else factor
    return match_range(eval_set(cfg, seed), calib_inputs, factor)


@dataclass
class SeedContext:
    """FP model, calibration statistics and the measured sensitivity report for one seed."""

    cfg: RunConfig
    seed: int
    model: LinearStack
    report: SensitivityReport
    calib_inputs: list
    cache: dict = field(default_factory=dict)

    def build(self, scheme: str | None = None, layer: LayerBuildConfig | None = None) -> QuantizedStack:
        scheme = scheme or self.cfg.calibration.scheme
        report = ablation_scheme(self.report, scheme, self.cfg.calibration.budgets)
        return quantize_model(self.model, report, layer or self.cfg.layer, self.cfg.calibration.tol,
                              calib_inputs=self.calib_inputs, cache=self.cache)

    def build_uniform(self, rounds: int, layer: LayerBuildConfig | None = None) -> QuantizedStack:
        """Every layer gets ``rounds`` QAO rounds (no stopping rule)."""
        return quantize_model(self.model, uniform_report(self.model.layer_ids, rounds), layer or self.cfg.layer, tol=None,
                              calib_inputs=self.calib_inputs, cache=self.cache)

    def scheme_rounds(self, scheme: str) -> int:
        return ablation_scheme(self.report, scheme, self.cfg.calibration.budgets).total_rounds


def prepare(cfg: RunConfig, seed: int) -> SeedContext:
    model = fp_model(cfg, seed)
    stats, inputs = collect_stats(model, calibration_set(cfg, seed))
    variances = {lid: layer_variance(s) for lid, s in stats.items()}
    report = classify(variances, cfg.calib_config(seed))
    return SeedContext(cfg, seed, model, report, inputs)


def uniform_quantize(cfg: RunConfig, seed: int, rounds: int | None = None, layer=None) -> QuantizedStack:
    """Build without a statistics pass: every layer gets the same QAO budget."""
    model = fp_model(cfg, seed)
    rounds = cfg.layer.qao_rounds if rounds is None else rounds
    layer = layer or cfg.layer
    if layer.act_quantizer == "static":
        _, inputs = collect_stats(model, calibration_set(cfg, seed))
    else:
        inputs = None
    return quantize_model(model, uniform_report(model.layer_ids, rounds), layer, tol=None, calib_inputs=inputs)


def swap_act_quantizer(qmodel: QuantizedStack, kind: str, calib_inputs=None) -> QuantizedStack:
    """Same weights, different activation quantizer on every layer."""
    layers = []
    for i, layer in enumerate(qmodel.layers):
        new = copy.copy(layer)
        new.act_quantizer = kind
        new.act_quantizer_ = make_act_quantizer(kind, layer.bits_a)
        if isinstance(new.act_quantizer_, StaticChannelQuantizer):
            new.act_quantizer_.fit(rotate_input(calib_inputs[i], layer.rotation_))
        layers.append(new)
    return QuantizedStack(layers)


@dataclass
class AblationResult:
    axis: str
    arms: tuple
    seeds: list
    metrics: dict  # arm -> list[ErrorMetrics], one per seed
    rounds: dict  # arm -> list[int]

    def mean_rel_frob(self, arm: str) -> float:
        return float(np.mean([m.rel_frob for m in self.metrics[arm]]))

    @property
    def winner(self) -> str:
        return min(self.arms, key=self.mean_rel_frob)

    def rows(self) -> list[dict]:
        out = []
        for arm in self.arms:
            rf = [m.rel_frob for m in self.metrics[arm]]
            out.append({
                "arm": arm,
                "mean_rel_frob": float(np.mean(rf)),
                "mean_sqnr_db": float(np.mean([m.sqnr_db for m in self.metrics[arm]])),
                "mean_qao_rounds": float(np.mean(self.rounds[arm])),
                "winner": arm == self.winner,
            })
        return out

    def table(self) -> str:
        lines = [f"axis: {self.axis}  seeds: {len(self.seeds)}",
                 f"{'arm':<20} {'rel_frob':>10} {'sqnr_db':>9} {'rounds':>8}  winner"]
        for r in self.rows():
            lines.append(f"{r['arm']:<20} {r['mean_rel_frob']:>10.6f} {r['mean_sqnr_db']:>9.3f} "
                         f"{r['mean_qao_rounds']:>8.1f}  {'*' if r['winner'] else ''}")
        return "\n".join(lines) + "\n"


def ablate(cfg: RunConfig, axis: str, seeds=None) -> AblationResult:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    seeds = cfg.benchmark.seeds if seeds is None else list(seeds)
    arms = AXES[axis]
    metrics = {a: [] for a in arms}
    rounds = {a: [] for a in arms}
    for seed in seeds:
        ctx = prepare(cfg, seed)
        if axis == "activation-scaling":
            inputs = wide_range_eval_set(cfg, seed, ctx.calib_inputs[:1])
            base = ctx.build()
            for arm in arms:
                q = swap_act_quantizer(base, _ACT_ARMS[arm], ctx.calib_inputs)
                metrics[arm].append(eval_model_error(ctx.model, q, inputs))
                rounds[arm].append(ctx.scheme_rounds(cfg.calibration.scheme))
            continue
        inputs = eval_set(cfg, seed)
        if axis == "qao":
            built = {"No QAO": (ctx.build_uniform(1), len(ctx.model)),
                     "With QAO": (ctx.build(), ctx.scheme_rounds(cfg.calibration.scheme))}
        else:
            built = {arm: (ctx.build(arm), ctx.scheme_rounds(arm)) for arm in arms}
        for arm in arms:
            q, r = built[arm]
            metrics[arm].append(eval_model_error(ctx.model, q, inputs))
            rounds[arm].append(r)
    return AblationResult(axis, arms, seeds, metrics, rounds)


def ablation_to_dict(res: AblationResult) -> dict:
    return {
        "axis": res.axis,
        "seeds": res.seeds,
        "arms": res.rows(),
        "winner": res.winner,
        "per_seed": {arm: [m.to_dict() for m in res.metrics[arm]] for arm in res.arms},
    }


def seed_error(cfg: RunConfig, seed: int, qmodel: QuantizedStack) -> ErrorMetrics:
    return eval_model_error(fp_model(cfg, seed), qmodel, eval_set(cfg, seed))
