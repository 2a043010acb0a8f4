"""Stacks of linear layers separated by an elementwise GELU.

``LinearStack`` is the full-precision reference, ``QuantizedStack`` holds one
fitted ``QuantizedLinear`` per layer.  Both accept ``(N, C)`` matrices or
``(B, N, C)`` batches.
"""
from __future__ import annotations

import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .lowrank import QuantizedLinear
from .tensor import DimensionError, atomic_write_bytes

ARCHIVE_FORMAT = "layerquant-model/1"


def gelu(x):
    # tanh approximation
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))


def layer_id(i: int) -> str:
    return f"layer_{i:02d}"


def _flatten(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.reshape(-1, x.shape[-1]), x.shape[:2]
    if x.ndim == 2:
        return x, None
    raise DimensionError(f"expected a matrix or (B, N, C) batch, got ndim={x.ndim}")


def _unflatten(y, lead):
    return y if lead is None else y.reshape(*lead, y.shape[-1])


class _Stack:
    layers: list

    def __len__(self):
        return len(self.layers)

    @property
    def layer_ids(self) -> list[str]:
        return [layer_id(i) for i in range(len(self))]

    def _apply(self, i, h):
        raise NotImplementedError

    def forward(self, x, collect: bool = False):
        """Run the stack; with ``collect`` also return every layer's input."""
        h, lead = _flatten(x)
        inputs = []
        for i in range(len(self)):
            if collect:
                inputs.append(_unflatten(h, lead))
            h = self._apply(i, h)
            if i < len(self) - 1:
                h = gelu(h)
        y = _unflatten(h, lead)
        return (y, inputs) if collect else y

    def transform(self, x):
        return self.forward(x)


class LinearStack(_Stack):
    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise DimensionError("one bias per weight is required")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise DimensionError(f"{layer_id(i)}: bias shape {b.shape} does not match {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"{layer_id(i)}: input dim {w.shape[0]} != previous output dim")

    @property
    def layers(self):
        return list(zip(self.weights, self.biases))

    @property
    def dims(self) -> list[int]:
        if not self.weights:
            return []
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def _apply(self, i, h):
        return h @ self.weights[i] + self.biases[i]


class QuantizedStack(_Stack):
    def __init__(self, layers: list[QuantizedLinear]):
        self.layers = list(layers)

    def _apply(self, i, h):
        return self.layers[i].transform(h)

    @property
    def dims(self) -> list[int]:
        if not self.layers:
            return []
        return [self.layers[0].in_dim_] + [layer.out_dim_ for layer in self.layers]

    def save(self, directory) -> None:
        """Write the archive into a sibling temp dir, then move it into place."""
        target = Path(directory)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}."))
        try:
            for lid, layer in zip(self.layer_ids, self.layers):
                layer.save(tmp / lid)
            meta = {"format": ARCHIVE_FORMAT, "activation": "gelu", "layers": self.layer_ids}
            atomic_write_bytes(tmp / "meta.json", (json.dumps(meta, indent=2) + "\n").encode())
            if target.exists():
                shutil.rmtree(target)
            tmp.rename(target)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise

    @classmethod
    def load(cls, directory) -> "QuantizedStack":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        if meta.get("format") != ARCHIVE_FORMAT:
            raise ValueError(f"unsupported model archive format {meta.get('format')!r}")
        return cls([QuantizedLinear.load(d / lid) for lid in meta["layers"]])
