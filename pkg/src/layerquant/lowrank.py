"""Two-branch quantized linear layer and its alternating optimizer.

A layer computes ``Y = Xr @ L1 @ L2 + Q_A(Xr) @ deq(W_R) + b`` with
``Xr = rotate_input(X)``.  ``L1 @ L2`` is a full-precision rank-r factor of
the rotated weight and ``W_R`` is the quantized residual.  ``qao`` fits both
branches by alternating between re-factorising ``W_hat - deq(W_R)`` and
re-quantizing ``W_hat - L1 @ L2`` on a grid fixed at initialisation.

Weights are stored ``(in_dim, out_dim)`` and bit-widths of 16 or more are
treated as full precision (the W16A16 baseline), so ``W_R`` is then kept as a
float residual.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .quantizers import (
    ACT_QUANTIZERS,
    QuantParams,
    QuantizedTensor,
    StaticChannelQuantizer,
    dequantize,
    fit_qparams,
    make_act_quantizer,
    quantize,
)
from .rotation import RotationDescriptor, rotate_input, rotate_weight
from .tensor import DimensionError, as_matrix, atomic_write_bytes, load_tensor, make_rng, save_tensor

FULL_PRECISION_BITS = 16

ROTATION_ALIASES = {
    "walsh": "walsh-hadamard",
    "randomized": "randomized-hadamard",
    "random": "randomized-hadamard",
}


class RankError(ValueError):
    pass


def canonical_rotation(kind: str) -> str:
    return ROTATION_ALIASES.get(kind, kind)


# -- truncated SVD ------------------------------------------------------------------


def truncated_svd(w, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-``r`` factors ``L1 = U[:, :r] * S[:r]``, ``L2 = Vt[:r]`` via LAPACK."""
    w = as_matrix(w)
    m, n = w.shape
    if not 0 <= r <= min(m, n):
        raise RankError(f"rank {r} outside [0, {min(m, n)}]")
    if r == 0:
        return np.zeros((m, 0)), np.zeros((0, n))
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    return u[:, :r] * s[:r], vt[:r].copy()


class _ExactSolver:
    exact = True

    def __init__(self, r):
        self.r = r

    def init(self, a):
        return truncated_svd(a, self.r)

    update = init


class _SubspaceSolver:
    """Warm-started block power iteration with a Rayleigh-Ritz step.

    The basis carries over between calls, so when consecutive matrices differ
    only by a small re-quantization update each call costs a handful of
    ``(m, n) x (n, r + p)`` products instead of a dense SVD.
    """

    exact = False

    def __init__(self, r, oversample=8, init_iters=6, update_iters=1, seed=0):
        self.r = r
        self.oversample = oversample
        self.init_iters = init_iters
        self.update_iters = update_iters
        self.seed = seed
        self.basis = None

    def _iterate(self, a, v, iters):
        for _ in range(iters):
            q, _ = np.linalg.qr(a @ v)
            v, _ = np.linalg.qr(a.T @ q)
        u, s, wt = np.linalg.svd(a @ v, full_matrices=False)
        self.basis = v @ wt.T
        return u[:, : self.r] * s[: self.r], self.basis[:, : self.r].T.copy()

    def init(self, a):
        k = min(self.r + self.oversample, min(a.shape))
        omega = make_rng(self.seed).standard_normal((a.shape[1], k))
        v, _ = np.linalg.qr(omega)
        return self._iterate(a, v, self.init_iters)

    def update(self, a):
        return self._iterate(a, self.basis, self.update_iters)


def _make_solver(kind: str, r: int, shape, seed: int):
    if kind == "auto":
        kind = "full" if min(shape) <= 128 else "subspace"
    if kind == "full":
        return _ExactSolver(r)
    if kind == "subspace":
        return _SubspaceSolver(r, seed=seed)
    raise ValueError(f"unknown svd_solver {kind!r}")


# -- QAO --------------------------------------------------------------------------------


@dataclass
class QaoResult:
    W_R: QuantizedTensor | np.ndarray
    L1_star: np.ndarray
    L2_star: np.ndarray
    err_star: float
    err_trace: np.ndarray
    weight_params: QuantParams | None = None

    @property
    def rounds_run(self) -> int:
        return len(self.err_trace)

    def residual(self) -> np.ndarray:
        if isinstance(self.W_R, QuantizedTensor):
            return dequantize(self.W_R)
        return self.W_R


def qao(
    w,
    rotation: RotationDescriptor,
    r: int,
    rounds: int,
    wq_bits: int,
    *,
    tol: float | None = None,
    requantize_best: bool = True,
    svd_solver: str = "auto",
    random_state: int = 0,
) -> QaoResult:
    """Quantization-aware alternating optimization of one weight.

    Each round records ``||R - deq(W_R)||_F`` for the current factors, keeps
    the best factors seen so far, then refactorises ``W_hat - deq(W_R)`` and
    re-quantizes the new residual.  Quantization parameters are fitted once,
    on the SVD-initialised residual, and then held fixed.

    ``tol`` stops early once a round improves the best error by less than that
    relative amount.  With ``requantize_best`` the returned ``W_R`` is the
    quantization of ``W_hat - L1* @ L2*``; otherwise it is the residual from
    the final update, as the loop literally leaves it.
    """
    w = as_matrix(w, "w")
    m, n = w.shape
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if not 0 <= r <= min(m, n):
        raise RankError(f"rank {r} outside [0, {min(m, n)}]")
    w_hat = rotate_weight(w, rotation)
    lossless = wq_bits >= FULL_PRECISION_BITS
    solver = _make_solver(svd_solver, r, w_hat.shape, random_state)

    if r == 0:
        l1, l2 = np.zeros((m, 0)), np.zeros((0, n))
    else:
        l1, l2 = solver.init(w_hat)
    resid = w_hat - l1 @ l2
    params = None if lossless else fit_qparams(resid, wq_bits, symmetric=False, granularity="channel")

    def _quant(x):
        return x if lossless else quantize(x, params)

    def _deq(q):
        return q if lossless else dequantize(q)

    wr = _quant(resid)
    wr_deq = _deq(wr)
    err_best = np.inf
    best = (l1, l2, wr)
    trace = []
    stalled = r == 0
    for i in range(rounds):
        err = float(np.linalg.norm(resid - wr_deq))
        trace.append(err)
        prev_best = err_best
        if err < err_best:
            err_best = err
            best = (l1, l2, wr)
        if tol is not None and i > 0 and prev_best - err_best <= tol * prev_best:
            break
        if stalled or (requantize_best and i == rounds - 1):
            # a stalled state repeats itself; the last update is unused when W_R is re-derived
            break
        l1, l2 = solver.update(w_hat - wr_deq)
        resid = w_hat - l1 @ l2
        new_wr = _quant(resid)
        if solver.exact:
            old_ints = wr if lossless else wr.ints
            new_ints = new_wr if lossless else new_wr.ints
            stalled = np.array_equal(old_ints, new_ints)
        wr = new_wr
        wr_deq = _deq(wr)

    l1s, l2s, wr_best = best
    return QaoResult(
        W_R=wr_best if requantize_best else wr,
        L1_star=l1s,
        L2_star=l2s,
        err_star=err_best,
        err_trace=np.asarray(trace),
        weight_params=params,
    )


# -- the layer ---------------------------------------------------------------------------


@dataclass
class LayerBuildConfig:
    bits_w: int = 4
    bits_a: int = 4
    rank: int = 32
    rotation: str = "walsh-hadamard"
    act_quantizer: str = "draq"
    qao_rounds: int = 1
    tol: float | None = None
    sign_seed: int = 0
    requantize_best: bool = True
    svd_solver: str = "auto"

    def replace(self, **kw) -> "LayerBuildConfig":
        return LayerBuildConfig(**{**asdict(self), **kw})


class QuantizedLinear(TransformerMixin, BaseEstimator):
    """Rotated low-rank + low-bit linear layer.

    ``fit(W, bias)`` runs QAO on the weight; ``transform(X)`` is the quantized
    forward pass.  ``act_quantizer="static"`` additionally needs calibration
    inputs (pre-rotation) passed as ``X_calib``.

    Parameters
    ----------
    bits_w, bits_a : int
        Weight and activation bit-widths; 16 keeps that side in full precision.
    rank : int
        Rank of the full-precision branch.
    rotation : {"identity", "walsh-hadamard", "randomized-hadamard"}
    act_quantizer : {"draq", "minmax", "token", "static", "none"}
    qao_rounds : int
        QAO budget; 1 is plain SVD initialisation followed by quantization.
    tol : float or None
        Relative-improvement stopping rule for QAO (None runs the full budget).
    """

    def __init__(
        self,
        bits_w=4,
        bits_a=4,
        rank=32,
        rotation="walsh-hadamard",
        act_quantizer="draq",
        qao_rounds=1,
        tol=None,
        sign_seed=0,
        requantize_best=True,
        svd_solver="auto",
    ):
        self.bits_w = bits_w
        self.bits_a = bits_a
        self.rank = rank
        self.rotation = rotation
        self.act_quantizer = act_quantizer
        self.qao_rounds = qao_rounds
        self.tol = tol
        self.sign_seed = sign_seed
        self.requantize_best = requantize_best
        self.svd_solver = svd_solver

    def fit(self, W, bias=None, X_calib=None):
        W = as_matrix(W, "W")
        in_dim, out_dim = W.shape
        if self.act_quantizer not in ACT_QUANTIZERS:
            raise ValueError(f"unknown act_quantizer {self.act_quantizer!r}")
        self.rotation_ = RotationDescriptor(in_dim, canonical_rotation(self.rotation), self.sign_seed)
        self.qao_ = qao(
            W,
            self.rotation_,
            self.rank,
            self.qao_rounds,
            self.bits_w,
            tol=self.tol,
            requantize_best=self.requantize_best,
            svd_solver=self.svd_solver,
            random_state=self.sign_seed,
        )
        self.L1_ = self.qao_.L1_star
        self.L2_ = self.qao_.L2_star
        self.W_R_ = self.qao_.W_R
        self.bias_ = np.zeros(out_dim) if bias is None else np.asarray(bias, dtype=np.float64).reshape(out_dim)
        self.act_quantizer_ = make_act_quantizer(self.act_quantizer, self.bits_a)
        if isinstance(self.act_quantizer_, StaticChannelQuantizer):
            if X_calib is None:
                raise ValueError("act_quantizer='static' needs calibration inputs (X_calib)")
            self.act_quantizer_.fit(rotate_input(as_matrix(X_calib, "X_calib"), self.rotation_))
        self._finalize()
        return self

    def _finalize(self):
        self.in_dim_, self.out_dim_ = self.L1_.shape[0], self.L2_.shape[1]
        self.n_features_in_ = self.in_dim_
        self.W_R_deq_ = dequantize(self.W_R_) if isinstance(self.W_R_, QuantizedTensor) else self.W_R_

    def transform(self, X):
        check_is_fitted(self, "W_R_deq_")
        X = as_matrix(X, "X")
        if X.shape[1] != self.in_dim_:
            raise DimensionError(f"expected {self.in_dim_} input features, got {X.shape[1]}")
        xr = rotate_input(X, self.rotation_)
        xq = xr if self.act_quantizer_ is None else self.act_quantizer_.transform(xr)
        y = xq @ self.W_R_deq_ + self.bias_
        if self.L1_.shape[1]:
            y = y + (xr @ self.L1_) @ self.L2_
        return y

    predict = transform

    @property
    def effective_rank(self) -> int:
        return self.L1_.shape[1]

    # -- archive -------------------------------------------------------------------

    def save(self, directory) -> None:
        check_is_fitted(self, "W_R_deq_")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "in_dim": self.in_dim_,
            "out_dim": self.out_dim_,
            "rank": self.effective_rank,
            "rotation": self.rotation_.to_dict(),
            "params": self.get_params(),
            "bias": [float(v) for v in self.bias_],
            "weight_quant": None,
            "act_quant": None,
        }
        save_tensor(d / "L1.lsgt", self.L1_)
        save_tensor(d / "L2.lsgt", self.L2_)
        if isinstance(self.W_R_, QuantizedTensor):
            meta["weight_quant"] = self.W_R_.params.to_dict()
            save_tensor(d / "W_R_ints.lsgt", self.W_R_.ints)
            save_tensor(d / "W_R_scale.lsgt", self.W_R_.params.scale)
        else:
            save_tensor(d / "W_R.lsgt", self.W_R_)
        if isinstance(self.act_quantizer_, StaticChannelQuantizer):
            meta["act_quant"] = self.act_quantizer_.params_.to_dict()
        atomic_write_bytes(d / "meta.json", (json.dumps(meta, indent=2) + "\n").encode())

    @classmethod
    def load(cls, directory) -> "QuantizedLinear":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        layer = cls(**meta["params"])
        layer.rotation_ = RotationDescriptor.from_dict(meta["rotation"])
        layer.L1_ = load_tensor(d / "L1.lsgt")
        layer.L2_ = load_tensor(d / "L2.lsgt")
        if meta["weight_quant"] is not None:
            params = QuantParams.from_dict(meta["weight_quant"])
            params = QuantParams(
                params.bits, params.symmetric, params.granularity, load_tensor(d / "W_R_scale.lsgt"), params.zero_point
            )
            layer.W_R_ = QuantizedTensor(load_tensor(d / "W_R_ints.lsgt"), params)
        else:
            layer.W_R_ = load_tensor(d / "W_R.lsgt")
        layer.bias_ = np.asarray(meta["bias"], dtype=np.float64)
        layer.act_quantizer_ = make_act_quantizer(layer.act_quantizer, layer.bits_a)
        if meta["act_quant"] is not None:
            layer.act_quantizer_.params_ = QuantParams.from_dict(meta["act_quant"])
            layer.act_quantizer_.n_features_in_ = layer.act_quantizer_.params_.scale.size
        layer._finalize()
        return layer


def build_layer(w, bias, config: LayerBuildConfig, X_calib=None) -> QuantizedLinear:
    return QuantizedLinear(**asdict(config)).fit(w, bias, X_calib=X_calib)


def forward(layer: QuantizedLinear, x) -> np.ndarray:
    return layer.transform(x)
