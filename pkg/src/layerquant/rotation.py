"""Orthogonal Hadamard rotations.

``hadamard_matrix`` builds the dense normalised Sylvester matrix (or its
random-sign variant ``D @ H``); ``fwht`` applies the same operator with the
O(n log n) butterfly.  Layers rotate inputs with ``rotate_input`` (``X @ Q``)
and weights with ``rotate_weight`` (``Q.T @ W``) so that the pair composes
back to ``X @ W``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, make_rng

KINDS = ("identity", "walsh-hadamard", "randomized-hadamard")


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RotationDescriptor:
    dim: int
    kind: str = "walsh-hadamard"
    sign_seed: int = 0

    def __post_init__(self):
        if not is_pow2(int(self.dim)):
            raise DimensionError(f"rotation dim must be a power of two, got {self.dim}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown rotation kind {self.kind!r}")

    def signs(self) -> np.ndarray:
        """The random ±1 diagonal (all ones for non-randomized kinds)."""
        if self.kind != "randomized-hadamard":
            return np.ones(self.dim)
        return make_rng(self.sign_seed).choice(np.array([-1.0, 1.0]), size=self.dim)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "kind": self.kind, "sign_seed": self.sign_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RotationDescriptor":
        return cls(int(d["dim"]), d["kind"], int(d.get("sign_seed", 0)))


def hadamard_matrix(desc: RotationDescriptor) -> np.ndarray:
    n = desc.dim
    if desc.kind == "identity":
        return np.eye(n)
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    h = h / math.sqrt(n)
    return desc.signs()[:, None] * h


def _fwht_last_axis(x: np.ndarray) -> np.ndarray:
    """Normalised Walsh-Hadamard transform along the last axis (copy)."""
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = np.array(x, dtype=np.float64, order="C", copy=True)
    h = 1
    while h < n:
        v = y.reshape(*lead, n // (2 * h), 2, h)
        a = v[..., 0, :].copy()
        b = v[..., 1, :]
        v[..., 0, :] += b
        v[..., 1, :] = a - b
        h *= 2
    return y / math.sqrt(n)


def fwht(x, desc: RotationDescriptor, side: str = "right") -> np.ndarray:
    """Multiply by ``hadamard_matrix(desc)``: ``x @ H`` for side="right", ``H @ x`` for "left"."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("fwht expects a matrix")
    if side == "right":
        if x.shape[1] != desc.dim:
            raise DimensionError(f"x has {x.shape[1]} columns, rotation dim is {desc.dim}")
        if desc.kind == "identity":
            return x.copy()
        # x @ (D H) = (x D) H
        return _fwht_last_axis(x * desc.signs()[None, :])
    if side == "left":
        if x.shape[0] != desc.dim:
            raise DimensionError(f"x has {x.shape[0]} rows, rotation dim is {desc.dim}")
        if desc.kind == "identity":
            return x.copy()
        # (D H) @ x = D (H x); H x = (x.T H).T since H is symmetric
        return desc.signs()[:, None] * _fwht_last_axis(x.T).T
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def rotate_input(x, desc: RotationDescriptor) -> np.ndarray:
    """``X @ Q`` over the channel axis of an (N, C) activation."""
    return fwht(x, desc, side="right")


def rotate_weight(w, desc: RotationDescriptor) -> np.ndarray:
    """``Q.T @ W`` for a (C_in, C_out) weight, so ``rotate_input(X) @ rotate_weight(W) == X @ W``."""
    w = np.asarray(w, dtype=np.float64)
    if desc.kind == "identity":
        return w.copy()
    if w.shape[0] != desc.dim:
        raise DimensionError(f"weight has {w.shape[0]} input rows, rotation dim is {desc.dim}")
    # (D H).T W = H (D W)
    return _fwht_last_axis((desc.signs()[:, None] * w).T).T


def outlier_spread_ratio(x_before, x_after) -> float:
    """Peak magnitude after rotation relative to before (0 if the input is all zero)."""
    before = np.asarray(x_before, dtype=np.float64)
    after = np.asarray(x_after, dtype=np.float64)
    if before.shape != after.shape:
        raise DimensionError(f"shape mismatch: {before.shape} vs {after.shape}")
    peak = np.abs(before).max()
    if peak == 0:
        return 0.0
    return float(np.abs(after).max() / peak)
