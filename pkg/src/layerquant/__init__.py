"""Low-bit (W4A4-style) post-training quantization of linear layer stacks.

Main pieces:

* ``quantizers`` -- affine quantizers, DRAQ, SmoothQuant-style scales, STE.
* ``rotation`` -- Walsh-Hadamard rotations and the fast transform.
* ``lowrank`` -- ``QuantizedLinear`` (low-rank FP branch + quantized residual)
  and the alternating optimizer ``qao``.
* ``volts`` -- variance-based layer sensitivity and QAO budget allocation.
* ``accounting`` -- effective parameter / op counts.
* ``harness`` / ``experiments`` -- synthetic benchmark and ablations.
"""
from .accounting import CompressionReport, compression_report, compression_table, model_layout
from .harness import ErrorMetrics, LongTailSpec, SyntheticModelSpec, eval_model_error, gen_dataset, gen_longtail, gen_model
from .lowrank import LayerBuildConfig, QaoResult, QuantizedLinear, build_layer, forward, qao, truncated_svd
from .quantizers import (
    DRAQuantizer,
    MinMaxQuantizer,
    QuantParams,
    QuantizedTensor,
    StaticChannelQuantizer,
    dequantize,
    draq_quantize,
    fake_quantize,
    fit_qparams,
    quantize,
    smooth_scale,
    ste_grad,
)
from .rotation import RotationDescriptor, fwht, hadamard_matrix, rotate_input, rotate_weight
from .stack import LinearStack, QuantizedStack
from .volts import CalibConfig, SensitivityReport, VoltsCalibrator, ablation_scheme, calibrate_model, classify

__version__ = "0.1.0"

__all__ = [
    "CalibConfig",
    "CompressionReport",
    "DRAQuantizer",
    "ErrorMetrics",
    "LayerBuildConfig",
    "LinearStack",
    "LongTailSpec",
    "MinMaxQuantizer",
    "QaoResult",
    "QuantParams",
    "QuantizedLinear",
    "QuantizedStack",
    "QuantizedTensor",
    "RotationDescriptor",
    "SensitivityReport",
    "StaticChannelQuantizer",
    "SyntheticModelSpec",
    "VoltsCalibrator",
    "ablation_scheme",
    "build_layer",
    "calibrate_model",
    "classify",
    "compression_report",
    "compression_table",
    "dequantize",
    "draq_quantize",
    "eval_model_error",
    "fake_quantize",
    "fit_qparams",
    "forward",
    "fwht",
    "gen_dataset",
    "gen_longtail",
    "gen_model",
    "hadamard_matrix",
    "model_layout",
    "qao",
    "quantize",
    "rotate_input",
    "rotate_weight",
    "smooth_scale",
    "ste_grad",
    "truncated_svd",
]
