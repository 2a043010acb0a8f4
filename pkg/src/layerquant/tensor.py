"""Dense array plumbing shared by every other module.

Matrices are 2-D float64 numpy arrays, activation batches are 3-D
``(batch, tokens, channels)`` float64 arrays.  Constructors go through
sklearn's ``check_array`` so non-finite values are rejected at the boundary.
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from sklearn.utils.validation import check_array

TENSOR_MAGIC = b"LSGT"


class DimensionError(ValueError):
    """Raised on empty inputs or incompatible shapes."""


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Validate ``x`` as a finite, non-empty float64 matrix."""
    try:
        return check_array(x, dtype=np.float64, ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc


def as_actbatch(x, name: str = "x") -> np.ndarray:
    """Validate ``x`` as a finite ``(B, N, C)`` activation batch.

    A 2-D input is promoted to a batch of one.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"{name} must be 3-D (batch, tokens, channels), got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise DimensionError(f"{name} is empty: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains NaN or Inf")
    return arr


def channel_abs_max(x) -> np.ndarray:
    """Per-channel max |x| over every leading axis (rows, or batch and tokens)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2 or arr.size == 0:
        raise DimensionError(f"channel_abs_max needs a non-empty matrix or batch, got shape {arr.shape}")
    return np.abs(arr.reshape(-1, arr.shape[-1])).max(axis=0)


def frob_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", under="ignore"):
        n = float(np.sqrt(np.sum(np.square(x))))
    if 1e-150 < n < 1e150:
        return n
    # squares under/overflowed: rescale by the largest entry first
    m = float(np.max(np.abs(x))) if x.size else 0.0
    if m == 0.0 or not np.isfinite(m):
        return m
    return m * float(np.sqrt(np.sum(np.square(x / m))))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; PCG64 streams are identical across platforms."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of labels (e.g. ``derive_seed(7, "calib", 3)``)."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def tensor_to_bytes(x) -> bytes:
    arr = np.ascontiguousarray(np.asarray(x, dtype="<f8"))
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != TENSOR_MAGIC:
        raise ValueError("not a tensor dump (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    offset = 8 + 8 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(buf) - offset != 8 * count:
        raise ValueError(f"tensor dump truncated: expected {8 * count} payload bytes")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims).astype(np.float64)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(path, x) -> None:
    atomic_write_bytes(path, tensor_to_bytes(x))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
