"""Effective parameter and operation counts for quantized layer stacks.

Counts are in 16-bit-equivalent units: a ``b``-bit weight costs ``b / 16`` of
a parameter and a low-bit matmul costs ``max(bits_w, bits_a) / 16`` of its
full-precision op count.  Full-precision extras (the low-rank factors and the
Hadamard transforms) are charged in full.  Biases and quantizer scales are
left out on both sides of the comparison.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

FP_BITS = 16
TABLE_CONFIGS = ((16, 16), (8, 8), (6, 6), (4, 4))


@dataclass(frozen=True)
class LayerShape:
    in_dim: int
    out_dim: int
    rank: int = 0
    rotation: str = "identity"


def model_layout(dims, rank: int = 0, rotation: str = "identity") -> list[LayerShape]:
    """Layer shapes for a stack with widths ``dims`` (rank clipped to each layer)."""
    return [LayerShape(m, n, min(rank, m, n), rotation) for m, n in zip(dims[:-1], dims[1:])]


def layout_of(model) -> list[LayerShape]:
    """Layer shapes of a fitted ``QuantizedStack``."""
    return [
        LayerShape(layer.in_dim_, layer.out_dim_, layer.effective_rank, layer.rotation_.kind) for layer in model.layers
    ]


def _rotated(shape: LayerShape) -> bool:
    return shape.rotation != "identity"


def fp_params(layout) -> float:
    return sum(s.in_dim * s.out_dim for s in layout) / 1e6


def fp_ops(layout, tokens: int) -> float:
    return sum(2 * tokens * s.in_dim * s.out_dim for s in layout) / 1e9


def effective_params(layout, bits_w: int) -> float:
    """Millions of 16-bit-equivalent parameters."""
    if bits_w >= FP_BITS:
        return fp_params(layout)
    total = 0.0
    for s in layout:
        total += s.in_dim * s.out_dim * bits_w / FP_BITS
        total += s.rank * (s.in_dim + s.out_dim)
    return total / 1e6


def effective_ops(layout, tokens: int, bits_w: int, bits_a: int) -> float:
    """Giga-ops for ``tokens`` input rows."""
    bits = max(bits_w, bits_a)
    if bits >= FP_BITS:
        return fp_ops(layout, tokens)
    total = 0.0
    for s in layout:
        total += 2 * tokens * s.in_dim * s.out_dim * bits / FP_BITS
        total += 2 * tokens * s.rank * (s.in_dim + s.out_dim)
        if _rotated(s):
            total += tokens * s.in_dim * math.log2(s.in_dim)
    return total / 1e9


def reduction_pct(quant: float, fp: float) -> float:
    return 100.0 * (1.0 - quant / fp)


@dataclass
class CompressionReport:
    config_name: str
    bits_w: int
    bits_a: int
    eff_params_M: float
    eff_ops_G: float
    params_reduction_pct: float
    ops_reduction_pct: float


def compression_report(layout, tokens: int, bits_w: int, bits_a: int, name: str | None = None) -> CompressionReport:
    p = effective_params(layout, bits_w)
    o = effective_ops(layout, tokens, bits_w, bits_a)
    return CompressionReport(
        config_name=name or f"W{bits_w}A{bits_a}",
        bits_w=bits_w,
        bits_a=bits_a,
        eff_params_M=p,
        eff_ops_G=o,
        params_reduction_pct=reduction_pct(p, fp_params(layout)),
        ops_reduction_pct=reduction_pct(o, fp_ops(layout, tokens)),
    )


def compression_table(layout, tokens: int, configs=TABLE_CONFIGS) -> list[CompressionReport]:
    return [compression_report(layout, tokens, bw, ba) for bw, ba in configs]


def reports_to_json(reports) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2) + "\n"


def format_table(reports) -> str:
    lines = [f"{'Bits':<8} | {'Params / M (down Ratio)':<26} | {'Ops / G (down Ratio)':<26}"]
    lines.append("-" * len(lines[0]))
    for r in reports:
        params = f"{r.eff_params_M:.4f} (down {r.params_reduction_pct:.2f}%)"
        ops = f"{r.eff_ops_G:.4f} (down {r.ops_reduction_pct:.2f}%)"
        lines.append(f"{r.config_name:<8} | {params:<26} | {ops:<26}")
    return "\n".join(lines) + "\n"
