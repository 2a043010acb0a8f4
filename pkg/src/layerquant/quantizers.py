"""Uniform affine quantization, channel pre-scaling, DRAQ and the STE gradient.

Integer tensors are float64 arrays holding exact small integers.  The affine
convention is ``ints = clip(round(x / s) - z, l, u)`` and ``x_hat = s * (ints + z)``,
so for an unsigned asymmetric grid the zero point is ``round(min / s)``.

Granularity refers to how scales broadcast over a 2-D array:
``"tensor"`` (one scale), ``"channel"`` (one per column) or ``"token"``
(one per row).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .tensor import DimensionError, as_matrix, channel_abs_max

GRANULARITIES = ("tensor", "channel", "token")


class QuantConfigError(ValueError):
    pass


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    f = np.floor(a, out=np.empty_like(x))
    # a - f is exact, so the tie test does not suffer from 0.5 + eps rounding
    a -= f
    f += a >= 0.5
    return np.copysign(f, x, out=f)


def _check_bits(bits) -> int:
    if int(bits) != bits or not 2 <= bits <= 16:
        raise QuantConfigError(f"bits must be an integer in [2, 16], got {bits!r}")
    return int(bits)


def int_range(bits: int, symmetric: bool) -> tuple[int, int]:
    if symmetric:
        return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    return 0, 2**bits - 1


@dataclass(frozen=True, eq=False)
class QuantParams:
    bits: int
    symmetric: bool
    granularity: str
    scale: np.ndarray
    zero_point: np.ndarray

    def __post_init__(self):
        _check_bits(self.bits)
        if self.granularity not in GRANULARITIES:
            raise QuantConfigError(f"unknown granularity {self.granularity!r}")
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        zero = np.atleast_1d(np.asarray(self.zero_point, dtype=np.float64))
        if scale.ndim != 1 or zero.shape != scale.shape:
            raise QuantConfigError("scale and zero_point must be 1-D vectors of equal length")
        if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise QuantConfigError("every scale entry must be finite and > 0")
        if np.any(zero != np.round(zero)):
            raise QuantConfigError("zero_point must be integer-valued")
        if self.symmetric and np.any(zero != 0):
            raise QuantConfigError("symmetric quantizers have zero_point = 0")
        if self.granularity == "tensor" and scale.size != 1:
            raise QuantConfigError("per-tensor params carry exactly one scale")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", zero)

    @property
    def clip_lo(self) -> int:
        return int_range(self.bits, self.symmetric)[0]

    @property
    def clip_hi(self) -> int:
        return int_range(self.bits, self.symmetric)[1]

    def broadcast(self, shape) -> tuple[np.ndarray, np.ndarray]:
        """Scale and zero point shaped to broadcast against a ``shape`` matrix."""
        rows, cols = shape
        n = self.scale.size
        if self.granularity == "channel":
            if n != cols:
                raise DimensionError(f"per-channel params have {n} scales for {cols} columns")
            return self.scale[None, :], self.zero_point[None, :]
        if self.granularity == "token":
            if n != rows:
                raise DimensionError(f"per-token params have {n} scales for {rows} rows")
            return self.scale[:, None], self.zero_point[:, None]
        return self.scale.reshape(1, 1), self.zero_point.reshape(1, 1)

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "symmetric": self.symmetric,
            "granularity": self.granularity,
            "scale": [float(v) for v in self.scale],
            "zero_point": [int(v) for v in self.zero_point],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(
            bits=int(d["bits"]),
            symmetric=bool(d["symmetric"]),
            granularity=d["granularity"],
            scale=np.asarray(d["scale"], dtype=np.float64),
            zero_point=np.asarray(d["zero_point"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    ints: np.ndarray
    params: QuantParams

    def __post_init__(self):
        ints = np.asarray(self.ints, dtype=np.float64)
        if ints.ndim != 2:
            raise DimensionError("quantized ints must be a matrix")
        if np.any(ints < self.params.clip_lo) or np.any(ints > self.params.clip_hi):
            raise QuantConfigError("integer values outside the clip range")
        object.__setattr__(self, "ints", ints)

    @property
    def shape(self):
        return self.ints.shape


def _reduce(x: np.ndarray, granularity: str, fn) -> np.ndarray:
    if granularity == "tensor":
        return np.atleast_1d(fn(x))
    return fn(x, axis=0 if granularity == "channel" else 1)


def fit_qparams(x, bits: int, symmetric: bool = True, granularity: str = "tensor") -> QuantParams:
    """Min-max calibration of a uniform quantizer.

    Degenerate groups (zero range) get scale 1.  For asymmetric grids the
    group's constant value is then placed on integer level 0 via the zero
    point, so integer-valued constants round-trip exactly.
    """
    bits = _check_bits(bits)
    if granularity not in GRANULARITIES:
        raise QuantConfigError(f"unknown granularity {granularity!r}")
    x = as_matrix(x)
    if symmetric:
        amax = _reduce(np.abs(x), granularity, np.max)
        scale = amax / (2 ** (bits - 1) - 1)
        scale[amax == 0] = 1.0
        zero = np.zeros_like(scale)
    else:
        lo = _reduce(x, granularity, np.min)
        hi = _reduce(x, granularity, np.max)
        scale = (hi - lo) / (2**bits - 1)
        degenerate = ~(scale > 0)
        scale[degenerate] = 1.0
        zero = round_half_away(lo / scale)
    return QuantParams(bits, symmetric, granularity, scale, zero)


def quantize(x, params: QuantParams) -> QuantizedTensor:
    x = as_matrix(x)
    s, z = params.broadcast(x.shape)
    ints = round_half_away(x / s)
    ints -= z
    np.clip(ints, params.clip_lo, params.clip_hi, out=ints)
    return QuantizedTensor(ints, params)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    s, z = q.params.broadcast(q.ints.shape)
    return s * (q.ints + z)


def fake_quantize(x, params: QuantParams) -> np.ndarray:
    return dequantize(quantize(x, params))


def smooth_scale(x_max, w_max, alpha: float = 0.5) -> np.ndarray:
    """Per-channel migration scale ``x_max**alpha / w_max**(1 - alpha)``.

    Returned as the diagonal vector; apply as ``X / s`` and ``s[:, None] * W``.
    Channels where either maximum is zero pass through with scale 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise QuantConfigError(f"alpha must lie in [0, 1], got {alpha}")
    x_max = np.asarray(x_max, dtype=np.float64)
    w_max = np.asarray(w_max, dtype=np.float64)
    if x_max.shape != w_max.shape:
        raise DimensionError(f"length mismatch: {x_max.shape} vs {w_max.shape}")
    if np.any(x_max < 0) or np.any(w_max < 0):
        raise QuantConfigError("maxima must be non-negative")
    dead = (x_max == 0) | (w_max == 0)
    xs = np.where(dead, 1.0, x_max)
    ws = np.where(dead, 1.0, w_max)
    return np.where(dead, 1.0, xs**alpha / ws ** (1.0 - alpha))


@dataclass(frozen=True, eq=False)
class DraqResult:
    q: QuantizedTensor
    chan_scale: np.ndarray
    token_scale: np.ndarray

    def dequantize(self) -> np.ndarray:
        qmax = self.q.params.clip_hi
        return self.token_scale[:, None] * self.q.ints / qmax * self.chan_scale[None, :]


def draq_quantize(x, bits: int) -> DraqResult:
    """Dynamic-range adaptive quantization of an ``(N, C)`` activation.

    Columns are normalised by their max magnitude, then each row is quantized
    with a symmetric per-token scale taken over the normalised values.
    """
    bits = _check_bits(bits)
    x = as_matrix(x)
    qmax = 2 ** (bits - 1) - 1
    s = np.abs(x).max(axis=0)
    s[s == 0] = 1.0
    xt = x / s[None, :]
    d = np.abs(xt).max(axis=1)
    d[d == 0] = 1.0
    ints = np.clip(round_half_away(qmax * xt / d[:, None]), -qmax - 1, qmax)
    params = QuantParams(bits, True, "token", d / qmax, np.zeros_like(d))
    return DraqResult(QuantizedTensor(ints, params), s, d)


def ste_grad(x, l, u):
    """Straight-through gradient of clamp: 1 on the closed interval [l, u], else 0."""
    if np.any(np.asarray(l) > np.asarray(u)):
        raise QuantConfigError("ste_grad needs l <= u")
    out = ((np.asarray(x) >= l) & (np.asarray(x) <= u)).astype(np.float64)
    return float(out) if out.ndim == 0 else out


def clamp(x, l, u):
    return np.clip(x, l, u)


# -- activation quantizers as transformers --------------------------------------------
#
# Each takes and returns an (N, C) matrix; ``transform`` is quantize-then-dequantize.


class DRAQuantizer(TransformerMixin, BaseEstimator):
    """Dynamic per-input DRAQ activation quantizer (no state to fit)."""

    def __init__(self, bits=4):
        self.bits = bits

    def fit(self, X=None, y=None):
        _check_bits(self.bits)
        self.n_features_in_ = None if X is None else as_matrix(X).shape[1]
        return self

    def transform(self, X):
        return draq_quantize(X, self.bits).dequantize()

    def __sklearn_is_fitted__(self):
        return True


class MinMaxQuantizer(TransformerMixin, BaseEstimator):
    """Dynamic min-max quantizer refitted on every input.

    ``granularity="tensor", symmetric=False`` is the plain MinMax baseline;
    ``granularity="token", symmetric=True`` is per-token symmetric quantization
    without any channel-wise range adaptation.
    """

    def __init__(self, bits=4, symmetric=False, granularity="tensor"):
        self.bits = bits
        self.symmetric = symmetric
        self.granularity = granularity

    def fit(self, X=None, y=None):
        _check_bits(self.bits)
        return self

    def transform(self, X):
        X = as_matrix(X)
        return fake_quantize(X, fit_qparams(X, self.bits, self.symmetric, self.granularity))

    def __sklearn_is_fitted__(self):
        return True


class StaticChannelQuantizer(TransformerMixin, BaseEstimator):
    """Per-channel symmetric quantizer with ranges frozen from calibration data.

    ``fit`` records the per-channel absolute maximum; inputs beyond that range
    clip at inference time.
    """

    def __init__(self, bits=4):
        self.bits = bits

    def fit(self, X, y=None):
        bits = _check_bits(self.bits)
        amax = channel_abs_max(as_matrix(X))
        scale = amax / (2 ** (bits - 1) - 1)
        scale[amax == 0] = 1.0
        self.params_ = QuantParams(bits, True, "channel", scale, np.zeros_like(scale))
        self.n_features_in_ = scale.size
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "params_"):
            return self.fit(X)
        amax = np.maximum(self.params_.scale * self.params_.clip_hi, channel_abs_max(as_matrix(X)))
        scale = amax / self.params_.clip_hi
        self.params_ = QuantParams(self.params_.bits, True, "channel", scale, np.zeros_like(scale))
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return fake_quantize(X, self.params_)


def make_act_quantizer(kind: str, bits: int):
    """Activation quantizer by name; ``None`` means pass-through."""
    if kind == "none" or bits >= 16:
        return None
    if kind == "draq":
        return DRAQuantizer(bits).fit()
    if kind == "minmax":
        return MinMaxQuantizer(bits, symmetric=False, granularity="tensor").fit()
    if kind == "token":
        return MinMaxQuantizer(bits, symmetric=True, granularity="token").fit()
    if kind == "static":
        return StaticChannelQuantizer(bits)
    raise QuantConfigError(f"unknown activation quantizer {kind!r}")


ACT_QUANTIZERS = ("none", "draq", "minmax", "token", "static")
