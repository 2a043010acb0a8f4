import math

import numpy as np
import pytest

from layerquant.harness import LongTailSpec, gen_dataset, gen_longtail
from layerquant.lowrank import LayerBuildConfig
from layerquant.stack import LinearStack, QuantizedStack
from layerquant.tensor import DimensionError, make_rng
from layerquant.volts import (
    DEFAULT_BUDGETS,
    SCHEMES,
    CalibConfig,
    CalibrationError,
    LayerStat,
    SensitivityReport,
    VoltsCalibrator,
    ablation_scheme,
    calibrate_model,
    channel_mean,
    classify,
    collect_stats,
    layer_variance,
    uniform_report,
)


def _stat(values, lid="layer_00"):
    st = LayerStat(lid)
    for k, v in enumerate(values):
        st.add(k, v)
    return st


def test_channel_mean_is_grand_mean():
    x = make_rng(0).standard_normal((2, 5, 7))
    # mean over channels, then over batch and tokens
    oracle = np.mean([[np.mean(x[b, t]) for t in range(5)] for b in range(2)])
    assert channel_mean(x) == pytest.approx(oracle, rel=1e-14)
    assert channel_mean(np.full((3, 4), 2.5)) == 2.5


def test_variance_is_population_variance():
    vals = [1.0, 2.0, 4.0, 7.0]
    mu = sum(vals) / 4
    assert layer_variance(_stat(vals)) == pytest.approx(sum((v - mu) ** 2 for v in vals) / 4, rel=1e-15)
    assert layer_variance(_stat([3.0] * 6)) == 0.0


def test_variance_needs_two_samples():
    with pytest.raises(CalibrationError, match="variance requires ≥ 2 samples"):
        layer_variance(_stat([1.0], "layer_03"))
    with pytest.raises(CalibrationError, match="layer_03"):
        layer_variance(_stat([1.0], "layer_03"))


def test_variance_rejects_non_finite():
    with pytest.raises(CalibrationError):
        layer_variance(_stat([1.0, math.inf]))


def test_stats_keyed_by_sample_index():
    st = LayerStat("x")
    st.add(5, 1.0)
    st.add(2, 3.0)
    np.testing.assert_array_equal(st.values(), [3.0, 1.0])


def test_classification_half_open_intervals():
    cfg = CalibConfig()
    rep = classify({"a": 0.0, "b": 0.001, "c": 0.075, "d": np.nextafter(0.075, 0), "e": np.nextafter(0.001, 0)}, cfg)
    assert [rep[k].cls for k in "abcde"] == ["frozen", "light", "full", "light", "frozen"]
    assert [rep[k].budget_rounds for k in "abc"] == [1, 30, 200]


def test_config_validation():
    with pytest.raises(ValueError):
        CalibConfig(delta1=0.1, delta2=0.01)
    with pytest.raises(ValueError):
        CalibConfig(scheme="random")
    with pytest.raises(ValueError):
        CalibConfig(budgets={"frozen": 1})


def test_report_roundtrip_and_table():
    rep = classify({"layer_00": 0.5, "layer_01": 0.0001, "layer_02": 0.01}, CalibConfig())
    assert SensitivityReport.from_list(rep.to_list()).to_list() == rep.to_list()
    assert rep.class_counts() == {"frozen": 1, "light": 1, "full": 1}
    assert rep.total_rounds == 231
    lines = rep.table().splitlines()
    assert [ln.split()[0] for ln in lines[1:]] == ["layer_00", "layer_02", "layer_01"]
    assert rep.to_list()[0] == {"layer_id": "layer_00", "variance": 0.5, "class": "full", "budget_rounds": 200}


def test_ablation_schemes():
    rep = classify({"a": 0.0, "b": 0.01, "c": 1.0}, CalibConfig())
    def classes(s):
        return [e.cls for e in ablation_scheme(rep, s).entries]
    assert classes("three-tier") == ["frozen", "light", "full"]
    assert classes("uniform-light") == ["light"] * 3
    assert classes("uniform-full") == ["full"] * 3
    assert classes("frozen+light") == ["frozen", "light", "light"]
    assert classes("frozen+full") == ["frozen", "full", "full"]
    assert ablation_scheme(rep, "uniform-full").total_rounds == 600
    with pytest.raises(ValueError):
        ablation_scheme(rep, "bogus")
    assert set(SCHEMES) == {"three-tier", "uniform-light", "uniform-full", "frozen+light", "frozen+full"}


def test_uniform_report():
    rep = uniform_report(["x", "y"], 7)
    assert rep.total_rounds == 14 and all(e.cls == "uniform" for e in rep.entries)


def _amplifier(seed, gain=4.0, dim=32):
    w2 = make_rng(seed).standard_normal((dim, dim)) / math.sqrt(dim)
    return LinearStack([gain * np.eye(dim), w2], [np.zeros(dim), np.zeros(dim)])


def test_amplification_ranks_second_layer_higher():
    for seed in range(10):
        spec = LongTailSpec(seed=seed, tokens=16, channels=32, base_scale=0.5, outlier_channels=1,
                            outlier_gain=5.0, shift_std=0.5)
        stats, _ = collect_stats(_amplifier(seed), [gen_longtail(spec, k) for k in range(12)])
        assert layer_variance(stats["layer_01"]) > layer_variance(stats["layer_00"])


def test_identical_samples_freeze_everything():
    spec = LongTailSpec(seed=0, tokens=8, channels=32)
    x = gen_longtail(spec)
    model, report = calibrate_model(_amplifier(0), [x, x.copy(), x.copy()], CalibConfig())
    assert all(e.variance == 0.0 and e.cls == "frozen" and e.budget_rounds == 1 for e in report.entries)
    assert isinstance(model, QuantizedStack) and len(model) == 2


def test_collect_stats_shapes_and_errors():
    model = _amplifier(0)
    data = gen_dataset(LongTailSpec(seed=1, tokens=8, channels=32), 3)
    stats, inputs = collect_stats(model, data)
    assert list(stats) == ["layer_00", "layer_01"]
    assert inputs[0].shape == (24, 32)
    with pytest.raises(DimensionError):
        collect_stats(LinearStack([], []), data)
    with pytest.raises(DimensionError):
        collect_stats(model, [])
    with pytest.raises(DimensionError):
        collect_stats(model, [np.ones((4, 16))])


def test_calibrate_single_sample_fails_with_layer_id():
    data = gen_dataset(LongTailSpec(seed=1, tokens=8, channels=32), 1)
    with pytest.raises(CalibrationError, match="layer_00: variance requires ≥ 2 samples"):
        calibrate_model(_amplifier(0), data, CalibConfig())


def test_budgets_reach_the_layers():
    spec = LongTailSpec(seed=2, tokens=16, channels=32, shift_std=0.3, scale_jitter=0.3)
    data = gen_dataset(spec, 6)
    layer_cfg = LayerBuildConfig(rank=4, rotation="walsh-hadamard")
    cfg = CalibConfig(layer=layer_cfg, budgets={"frozen": 1, "light": 3, "full": 7})
    qmodel, report = calibrate_model(_amplifier(2), data, cfg)
    for layer, entry in zip(qmodel.layers, report.entries):
        assert layer.qao_rounds == entry.budget_rounds
        assert layer.qao_.rounds_run <= entry.budget_rounds
        assert (layer.tol is not None) == (entry.cls == "full")


def test_calibrator_estimator():
    data = gen_dataset(LongTailSpec(seed=3, tokens=8, channels=32, scale_jitter=0.3), 4)
    cal = VoltsCalibrator(layer_config=LayerBuildConfig(rank=4)).fit(_amplifier(3), data)
    assert set(cal.report_.class_counts()) == {"frozen", "light", "full"}
    assert cal.transform(data[0][0]).shape == (8, 32)
    assert cal.get_params()["delta1"] == 0.001 and DEFAULT_BUDGETS == {"frozen": 1, "light": 30, "full": 200}
