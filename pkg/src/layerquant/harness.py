"""Synthetic layer stacks, long-tail activations and end-to-end error metrics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .stack import LinearStack
from .tensor import DimensionError, derive_seed, make_rng, frob_norm
from .rotation import is_pow2


@dataclass
class SyntheticModelSpec:
    """Layer ``i`` maps ``dims[i] -> dims[i + 1]``.

    Weight entries are drawn with standard deviation ``sigma * gain_i / sqrt(fan_in)``;
    ``kind="heavy-tail"`` draws Student-t entries with ``nu`` degrees of freedom
    (rescaled to unit variance when ``nu > 2``).
    """

    seed: int = 0
    depth: int = 4
    dims: list = field(default_factory=lambda: [256, 512, 512, 512, 256])
    weight_dist: dict = field(default_factory=lambda: {"kind": "gaussian", "sigma": 1.0})
    bias_dist: dict = field(default_factory=lambda: {"kind": "gaussian", "sigma": 0.02})
    layer_gains: list | None = None

    def validate(self) -> None:
        if self.depth < 0:
            raise DimensionError("depth must be >= 0")
        if len(self.dims) != self.depth + 1 and not (self.depth == 0 and len(self.dims) <= 1):
            raise DimensionError(f"depth {self.depth} needs {self.depth + 1} dims, got {len(self.dims)}")
        if self.layer_gains is not None and len(self.layer_gains) != self.depth:
            raise DimensionError("layer_gains needs one entry per layer")
        kind = self.weight_dist.get("kind")
        if kind not in ("gaussian", "heavy-tail"):
            raise ValueError(f"unknown weight distribution {kind!r}")


def _draw(rng, dist: dict, shape) -> np.ndarray:
    kind = dist.get("kind", "gaussian")
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "heavy-tail":
        nu = float(dist["nu"])
        t = rng.standard_t(nu, size=shape)
        return t / math.sqrt(nu / (nu - 2)) if nu > 2 else t
    raise ValueError(f"unknown distribution {kind!r}")


def gen_model(spec: SyntheticModelSpec) -> LinearStack:
    spec.validate()
    rng = make_rng(derive_seed("model", spec.seed))
    gains = spec.layer_gains or [1.0] * spec.depth
    sigma = float(spec.weight_dist.get("sigma", 1.0))
    bias_sigma = float(spec.bias_dist.get("sigma", 0.0))
    weights, biases = [], []
    for i in range(spec.depth):
        m, n = spec.dims[i], spec.dims[i + 1]
        w = _draw(rng, spec.weight_dist, (m, n)) * (sigma * gains[i] / math.sqrt(m))
        b = _draw(rng, spec.bias_dist, (n,)) * bias_sigma
        weights.append(w)
        biases.append(b)
    return LinearStack(weights, biases)


@dataclass
class LongTailSpec:
    """Gaussian activations with ``outlier_channels`` channels amplified by ``outlier_gain``.

    Outlier channels are fixed by ``seed`` (shared by every sample drawn from the
    spec).  ``shift_std`` and ``scale_jitter`` add a per-sample offset and a
    per-sample log-normal magnitude, which is what makes calibration samples
    differ from one another.  ``depth_drift`` changes the outlier gain and
    moves the outlier set when activations are drawn for a deeper layer.
    """

    seed: int = 0
    tokens: int = 64
    channels: int = 256
    batch: int = 1
    base_scale: float = 1.0
    outlier_channels: int = 8
    outlier_gain: float = 100.0
    depth_drift: float = 0.0
    shift_std: float = 0.0
    scale_jitter: float = 0.0

    def validate(self) -> None:
        if not 0 <= self.outlier_channels < self.channels:
            raise ValueError("need 0 <= outlier_channels < channels")
        if self.outlier_gain < 1:
            raise ValueError("outlier_gain must be >= 1")
        if min(self.tokens, self.channels, self.batch) < 1:
            raise DimensionError("tokens, channels and batch must be >= 1")


def outlier_channel_set(spec: LongTailSpec, depth: int = 0) -> np.ndarray:
    perm = make_rng(derive_seed("outliers", spec.seed)).permutation(spec.channels)
    shift = int(round(depth * spec.depth_drift * spec.channels / 4)) % spec.channels
    return np.sort((perm[: spec.outlier_channels] + shift) % spec.channels)


def gen_longtail(spec: LongTailSpec, sample: int = 0, depth: int = 0, range_gain: float = 1.0) -> np.ndarray:
    """One ``(batch, tokens, channels)`` activation batch."""
    spec.validate()
    rng = make_rng(derive_seed("longtail", spec.seed, sample, depth))
    x = rng.standard_normal((spec.batch, spec.tokens, spec.channels))
    shift = spec.shift_std * rng.standard_normal()
    scale = spec.base_scale * math.exp(spec.scale_jitter * rng.standard_normal())
    x = scale * (x + shift)
    if spec.outlier_channels:
        gain = spec.outlier_gain * math.exp(spec.depth_drift * depth) if spec.outlier_gain > 1 else 1.0
        x[..., outlier_channel_set(spec, depth)] *= gain
    return x * range_gain


def gen_dataset(spec: LongTailSpec, num_samples: int, stream: str = "calib", range_gain: float = 1.0) -> list:
    """``num_samples`` independent batches; distinct ``stream`` names give disjoint draws."""
    offset = derive_seed(stream) % (1 << 32)
    return [gen_longtail(spec, sample=offset + k, range_gain=range_gain) for k in range(num_samples)]


def match_range(samples, reference, factor: float) -> list:
    """Rescale each sample so its peak ``|x|`` is ``factor`` times the peak over ``reference``.

    Used to build evaluation inputs whose dynamic range genuinely exceeds the
    calibration range (a fixed gain alone does not, once calibration samples
    carry their own magnitude jitter).
    """
    ref = max(float(np.abs(r).max()) for r in reference)
    out = []
    for x in samples:
        peak = float(np.abs(x).max())
        out.append(x * (factor * ref / peak) if peak > 0 else np.array(x, dtype=np.float64))
    return out


@dataclass
class ErrorMetrics:
    rel_frob: float
    sqnr_db: float
    max_abs: float

    def to_dict(self) -> dict:
        return {
            "rel_frob": self.rel_frob,
            "sqnr_db": "inf" if math.isinf(self.sqnr_db) else self.sqnr_db,
            "max_abs": self.max_abs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def error_metrics(y_fp, y_q) -> ErrorMetrics:
    y_fp = np.asarray(y_fp, dtype=np.float64)
    y_q = np.asarray(y_q, dtype=np.float64)
    if y_fp.shape != y_q.shape:
        raise DimensionError(f"output shapes differ: {y_fp.shape} vs {y_q.shape}")
    err = frob_norm(y_q - y_fp)
    ref = frob_norm(y_fp)
    rel = err / ref if ref > 0 else (0.0 if err == 0 else math.inf)
    sqnr = math.inf if err == 0 else 20.0 * math.log10(ref / err) if ref > 0 else -math.inf
    return ErrorMetrics(rel, sqnr, float(np.max(np.abs(y_q - y_fp))) if y_fp.size else 0.0)


def eval_model_error(fp_model, q_model, inputs) -> ErrorMetrics:
    """Metrics over the concatenated outputs of both models on ``inputs``."""
    if list(fp_model.dims) != list(q_model.dims):
        raise DimensionError(f"model dims differ: {fp_model.dims} vs {q_model.dims}")
    y_fp = np.concatenate([np.asarray(fp_model.forward(x)).reshape(-1, fp_model.dims[-1]) for x in inputs])
    y_q = np.concatenate([np.asarray(q_model.forward(x)).reshape(-1, q_model.dims[-1]) for x in inputs])
    return error_metrics(y_fp, y_q)


def check_pow2_dims(dims) -> None:
    bad = [d for d in dims if not is_pow2(int(d))]
    if bad:
        raise DimensionError(f"Hadamard rotation needs power-of-two widths, got {bad}")


def spec_to_dict(spec) -> dict:
    return asdict(spec)
