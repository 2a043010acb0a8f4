import json
import math

import pytest

from layerquant.accounting import (
    LayerShape,
    compression_report,
    compression_table,
    effective_ops,
    effective_params,
    format_table,
    fp_ops,
    fp_params,
    layout_of,
    model_layout,
    reports_to_json,
)
from layerquant.harness import SyntheticModelSpec, gen_model
from layerquant.lowrank import LayerBuildConfig
from layerquant.volts import quantize_model, uniform_report

DIMS = [256, 512, 512, 512, 256]


def test_layout_clips_rank():
    layout = model_layout([8, 4, 16], rank=6, rotation="walsh-hadamard")
    assert layout == [LayerShape(8, 4, 4, "walsh-hadamard"), LayerShape(4, 16, 4, "walsh-hadamard")]


def test_fp_counts_by_hand():
    layout = model_layout([4, 8, 2])
    assert fp_params(layout) == (32 + 16) / 1e6
    assert fp_ops(layout, tokens=10) == 2 * 10 * 48 / 1e9


def test_effective_counts_by_hand():
    layout = [LayerShape(64, 32, 4, "walsh-hadamard")]
    assert effective_params(layout, 4) == pytest.approx((64 * 32 * 4 / 16 + 4 * 96) / 1e6, rel=1e-15)
    expect_ops = 2 * 8 * 64 * 32 * 8 / 16 + 2 * 8 * 4 * 96 + 8 * 64 * 6
    assert effective_ops(layout, 8, 4, 8) == pytest.approx(expect_ops / 1e9, rel=1e-15)
    assert effective_params(layout, 16) == fp_params(layout)


@pytest.mark.parametrize("bits,ideal", [(8, 50.0), (6, 62.5), (4, 75.0)])
def test_rank0_identity_exact_ratios(bits, ideal):
    r = compression_report(model_layout(DIMS), 1024, bits, bits)
    assert r.params_reduction_pct == ideal and r.ops_reduction_pct == ideal


def test_rank32_constant_gap():
    low = compression_table(model_layout(DIMS, 32, "walsh-hadamard"), 1024)
    ideal = {8: 50.0, 6: 62.5, 4: 75.0}
    gaps_p = [ideal[r.bits_w] - r.params_reduction_pct for r in low[1:]]
    gaps_o = [ideal[r.bits_w] - r.ops_reduction_pct for r in low[1:]]
    assert max(gaps_p) - min(gaps_p) < 1e-9 and gaps_p[0] > 0
    assert max(gaps_o) - min(gaps_o) < 1e-9 and gaps_o[0] > 0
    # closed form of the parameter gap: rank-32 factors over the FP parameter count
    extra = sum(32 * (m + n) for m, n in zip(DIMS[:-1], DIMS[1:]))
    assert gaps_p[0] == pytest.approx(100 * extra / (fp_params(model_layout(DIMS)) * 1e6), rel=1e-12)


def test_mixed_bits_use_the_wider_operand():
    layout = model_layout(DIMS)
    assert effective_ops(layout, 16, 4, 8) == effective_ops(layout, 16, 8, 8)


def test_table_rows_and_serialisation():
    reports = compression_table(model_layout(DIMS, 32, "walsh-hadamard"), 1024)
    assert [r.config_name for r in reports] == ["W16A16", "W8A8", "W6A6", "W4A4"]
    assert reports[0].params_reduction_pct == 0.0
    rows = json.loads(reports_to_json(reports))
    assert rows[3]["bits_w"] == 4 and math.isclose(rows[3]["eff_params_M"], reports[3].eff_params_M)
    text = format_table(reports)
    assert text.splitlines()[0].startswith("Bits") and "W4A4" in text


def test_layout_of_fitted_model():
    model = gen_model(SyntheticModelSpec(seed=0, depth=2, dims=[32, 64, 16]))
    q = quantize_model(model, uniform_report(model.layer_ids, 1), LayerBuildConfig(rank=8), tol=None)
    assert layout_of(q) == model_layout([32, 64, 16], 8, "walsh-hadamard")
