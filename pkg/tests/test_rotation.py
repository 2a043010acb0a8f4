import math

import numpy as np
import pytest
from scipy.linalg import hadamard as scipy_hadamard

from layerquant.harness import LongTailSpec, gen_longtail
from layerquant.rotation import (
    RotationDescriptor,
    fwht,
    hadamard_matrix,
    is_pow2,
    outlier_spread_ratio,
    rotate_input,
    rotate_weight,
)
from layerquant.tensor import DimensionError, make_rng


def test_descriptor_validation():
    assert is_pow2(1) and is_pow2(4096) and not is_pow2(12) and not is_pow2(0)
    with pytest.raises(DimensionError):
        RotationDescriptor(12)
    with pytest.raises(ValueError):
        RotationDescriptor(8, "spiral")
    d = RotationDescriptor(16, "randomized-hadamard", sign_seed=3)
    assert RotationDescriptor.from_dict(d.to_dict()) == d


def test_small_cases():
    np.testing.assert_array_equal(hadamard_matrix(RotationDescriptor(1)), [[1.0]])
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(hadamard_matrix(RotationDescriptor(2)), [[r, r], [r, -r]], rtol=0, atol=1e-16)


@pytest.mark.parametrize("n", [2**k for k in range(11)])
def test_matches_sylvester_oracle(n):
    np.testing.assert_allclose(hadamard_matrix(RotationDescriptor(n)), scipy_hadamard(n) / math.sqrt(n),
                               rtol=0, atol=1e-15)


def test_orthogonal_up_to_4096():
    for k in range(13):
        n = 2**k
        h = hadamard_matrix(RotationDescriptor(n))
        assert np.abs(h @ h.T - np.eye(n)).max() < 1e-12


def test_randomized_is_signed_walsh():
    d = RotationDescriptor(32, "randomized-hadamard", sign_seed=5)
    signs = d.signs()
    assert set(np.unique(signs)) <= {-1.0, 1.0}
    np.testing.assert_array_equal(signs, RotationDescriptor(32, "randomized-hadamard", sign_seed=5).signs())
    assert not np.array_equal(signs, RotationDescriptor(32, "randomized-hadamard", sign_seed=6).signs())
    np.testing.assert_allclose(hadamard_matrix(d), signs[:, None] * hadamard_matrix(RotationDescriptor(32)))
    h = hadamard_matrix(d)
    assert np.abs(h @ h.T - np.eye(32)).max() < 1e-12


def test_fwht_delta_spreads_uniformly():
    e0 = np.array([[1.0, 0, 0, 0]])
    np.testing.assert_allclose(fwht(e0, RotationDescriptor(4)), [[0.5] * 4], rtol=0, atol=1e-16)


def test_fwht_involution():
    x = make_rng(0).standard_normal((5, 64))
    d = RotationDescriptor(64)
    assert np.abs(fwht(fwht(x, d), d) - x).max() < 1e-9


@pytest.mark.parametrize("kind", ["walsh-hadamard", "randomized-hadamard", "identity"])
def test_fwht_vs_dense(kind):
    x = make_rng(1).standard_normal((16, 16))
    d = RotationDescriptor(16, kind, sign_seed=2)
    h = hadamard_matrix(d)
    assert np.abs(fwht(x, d) - x @ h).max() < 1e-9
    assert np.abs(fwht(x, d, side="left") - h @ x).max() < 1e-9


def test_fwht_shape_checks():
    d = RotationDescriptor(8)
    with pytest.raises(DimensionError):
        fwht(np.ones((2, 3, 8)), d)
    with pytest.raises(ValueError):
        fwht(np.ones((8, 8)), d, side="top")
    with pytest.raises(DimensionError):
        fwht(np.ones((2, 4)), d)


def test_norm_preservation_and_layer_identity():
    rng = make_rng(3)
    x, w = rng.standard_normal((10, 128)), rng.standard_normal((128, 32))
    for kind in ("walsh-hadamard", "randomized-hadamard"):
        d = RotationDescriptor(128, kind, sign_seed=4)
        xr = rotate_input(x, d)
        assert abs(np.linalg.norm(xr) / np.linalg.norm(x) - 1) < 1e-9
        y = xr @ rotate_weight(w, d)
        assert np.linalg.norm(y - x @ w) / np.linalg.norm(x @ w) < 1e-9


def test_spread_ratio():
    x = make_rng(5).standard_normal((4, 16))
    assert outlier_spread_ratio(x, fwht(x, RotationDescriptor(16, "identity"))) == 1.0
    for k in range(13):
        n = 2**k
        e = np.zeros((1, n))
        e[0, n // 2] = 123.0
        assert abs(outlier_spread_ratio(e, fwht(e, RotationDescriptor(n))) - 1 / math.sqrt(n)) < 1e-12
    assert outlier_spread_ratio(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0


def test_spread_ratio_long_tail():
    below = 0
    for seed in range(100):
        x = gen_longtail(LongTailSpec(seed=seed, tokens=32, channels=128, outlier_channels=4))[0]
        below += outlier_spread_ratio(x, rotate_input(x, RotationDescriptor(128))) < 1
    assert below >= 95
