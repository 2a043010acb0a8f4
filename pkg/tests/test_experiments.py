import numpy as np
import pytest

from layerquant.config import standard_benchmark
from layerquant.experiments import (
    AXES,
    ablate,
    ablation_to_dict,
    calibration_set,
    eval_set,
    prepare,
    swap_act_quantizer,
    uniform_quantize,
)
from layerquant.harness import match_range
from layerquant.quantizers import make_act_quantizer
from layerquant.rotation import RotationDescriptor, rotate_input
from layerquant.stack import LinearStack, QuantizedStack, gelu, layer_id

STD = standard_benchmark()


def test_gelu_tanh_form():
    x = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(gelu(x), ref, rtol=1e-15)
    assert layer_id(3) == "layer_03"


def test_stack_forward_shapes_and_collect():
    rng = np.random.default_rng(0)
    model = LinearStack([rng.standard_normal((4, 8)), rng.standard_normal((8, 2))], [np.zeros(8), np.ones(2)])
    x = rng.standard_normal((3, 5, 4))
    y, inputs = model.forward(x, collect=True)
    assert y.shape == (3, 5, 2) and [i.shape for i in inputs] == [(3, 5, 4), (3, 5, 8)]
    np.testing.assert_allclose(y, gelu(x @ model.weights[0]) @ model.weights[1] + 1)
    np.testing.assert_allclose(model.forward(x[0]), y[0])


def test_quantized_stack_archive_roundtrip(tmp_path):
    q = uniform_quantize(STD, 1, rounds=2)
    q.save(tmp_path / "m")
    back = QuantizedStack.load(tmp_path / "m")
    x = eval_set(STD, 1)[0]
    assert back.forward(x).tobytes() == q.forward(x).tobytes()
    assert back.dims == q.dims == STD.model.dims
    # saving over an existing archive replaces it atomically
    q.save(tmp_path / "m")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m"]


def test_seed_context_scheme_rounds():
    ctx = prepare(STD, 0)
    counts = ctx.report.class_counts()
    assert counts == {"frozen": 1, "light": 2, "full": 1}
    assert ctx.scheme_rounds("uniform-full") == 800
    assert ctx.scheme_rounds("three-tier") == 261
    assert ctx.scheme_rounds("frozen+light") == 91


def test_standard_benchmark_classes_stable_across_seeds():
    # the layer gains put each class well inside its interval
    for seed in range(0, 100, 11):
        ctx = prepare(STD, seed)
        assert [e.cls for e in ctx.report.entries] == ["frozen", "full", "light", "light"]


def test_swap_act_quantizer_keeps_weights():
    ctx = prepare(STD, 2)
    base = ctx.build("uniform-light")
    swapped = swap_act_quantizer(base, "token", ctx.calib_inputs)
    for a, b in zip(base.layers, swapped.layers):
        assert a.W_R_deq_ is b.W_R_deq_ and b.act_quantizer == "token"
    assert base.layers[0].act_quantizer == "draq"


def test_no_scaling_between_draq_and_static_on_wide_range_inputs():
    # quantizer-level ordering on long-tail inputs whose range is 2x the calibration range
    wins = 0
    desc = RotationDescriptor(256)
    for seed in range(20):
        calib = np.concatenate([c.reshape(-1, 256) for c in calibration_set(STD, seed)])
        x = match_range(eval_set(STD, seed)[:1], [calib], 2.0)[0].reshape(-1, 256)
        xr, cr = rotate_input(x, desc), rotate_input(calib, desc)
        static = make_act_quantizer("static", 4).fit(cr)
        err = {k: np.linalg.norm(q.transform(xr) - xr) for k, q in
               (("draq", make_act_quantizer("draq", 4)), ("token", make_act_quantizer("token", 4)), ("static", static))}
        wins += err["draq"] <= err["token"] * 1.02 and err["token"] < err["static"]
    assert wins >= 19


def test_ablation_axes_and_directions():
    seeds = [0, 1]
    act = ablate(STD, "activation-scaling", seeds)
    assert act.arms == ("No scaling", "Calibrated Scaling", "DRAQ")
    assert act.winner == "DRAQ"
    qao_res = ablate(STD, "qao", seeds)
    assert qao_res.arms == ("No QAO", "With QAO")
    assert qao_res.mean_rel_frob("With QAO") <= qao_res.mean_rel_frob("No QAO")
    d = ablation_to_dict(qao_res)
    assert d["winner"] == "With QAO" and len(d["per_seed"]["No QAO"]) == 2
    assert "winner" in qao_res.table()
    with pytest.raises(ValueError):
        ablate(STD, "bogus", seeds)


def test_scheme_axis_arm_names():
    assert AXES["sensitivity-scheme"] == ("uniform-light", "uniform-full", "frozen+light", "frozen+full", "three-tier")
