#!/usr/bin/env python3
"""
Tests for partial sums, contrast weights and the CUSUM profiles.
"""

import os
import sys

import numpy as np
import pytest

# Add parent directory to Python path to access libs
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from libs.cusum_core import (
    W_profile,
    compute_W,
    contrast_weights,
    cusum_contrast,
    cusum_profile,
    partial_sums,
)
from libs.errors import DegenerateVariance


def _naive_W(values, k):
    n, p = values.shape
    weights = np.array([1.0 / k if i < k else -1.0 / (n - k) for i in range(n)])
    mean_gap = weights @ values
    U = k * (n - k) / n * mean_gap
    return float(U @ U / (n * np.sqrt(p)))


def test_contrast_weights():
    assert np.allclose(contrast_weights(4, 2), [0.5, 0.5, -0.5, -0.5])
    assert np.allclose(contrast_weights(3, 1), [1.0, -0.5, -0.5])
    assert contrast_weights(10, 3).sum() == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("k", [0, 4, -1])
def test_contrast_weights_out_of_range(k):
    with pytest.raises(IndexError):
        contrast_weights(4, k)


def test_two_point_hand_example():
    X = np.array([[0.0], [2.0]])
    assert compute_W(X, 1) == pytest.approx(0.5)
    profile = cusum_profile(X, 0, [1.0])
    assert profile.values[0, 0] == pytest.approx(-1.0 / np.sqrt(2.0))


@pytest.mark.parametrize("level", [3.0, 0.1, -0.7, 1e6 + 0.3])
def test_constant_panel_is_exactly_zero(level):
    X = np.full((100, 4), level)
    assert np.all(cusum_contrast(X) == 0.0)
    assert np.all(W_profile(X) == 0.0)
    assert np.all(cusum_profile(X, 0, np.ones(4)).values == 0.0)
    assert np.all(cusum_profile(X, 0.5, np.ones(4)).values == 0.0)


def test_profile_matches_naive_loop():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((12, 3))
    profile = W_profile(X)
    assert profile.shape == (11,)
    for k in range(1, 12):
        assert profile[k - 1] == pytest.approx(_naive_W(X, k), rel=1e-10)
        assert compute_W(X, k) == pytest.approx(profile[k - 1], rel=1e-12)


def test_location_invariance_and_scale_homogeneity():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((30, 6))
    shifted = X + rng.standard_normal(6) * 50.0
    assert np.allclose(W_profile(shifted), W_profile(X), rtol=1e-8, atol=1e-10)
    assert np.allclose(W_profile(3.0 * X), 9.0 * W_profile(X), rtol=1e-12)


def test_time_reversal():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((17, 5))
    forward = W_profile(X)
    backward = W_profile(X[::-1])
    assert np.allclose(backward, forward[::-1], rtol=1e-10)


def test_weighted_sum_of_squares_identity():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((25, 4))
    sigma = np.array([0.5, 1.0, 2.0, 3.0])
    C = cusum_profile(X, 0, sigma).values
    assert np.allclose(W_profile(X) * np.sqrt(4), (sigma ** 2 * C ** 2).sum(axis=1))


def test_boundary_weighting():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((20, 2))
    plain = cusum_profile(X, 0, np.ones(2)).values
    weighted = cusum_profile(X, 0.5, np.ones(2)).values
    frac = np.arange(1, 20) / 20.0
    assert np.allclose(weighted, plain / np.sqrt(frac * (1 - frac))[:, None])


def test_shared_partial_sums():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((10, 3))
    sums = partial_sums(X)
    assert sums.n == 10 and sums.p == 3
    assert np.allclose(sums.S[-1], X.sum(axis=0))
    assert np.allclose(np.diff(sums.S, axis=0), X)
    assert np.array_equal(sums.origin, X[0])
    assert np.array_equal(cusum_contrast(X, sums), cusum_contrast(X))


def test_degenerate_sigma_is_reported():
    X = np.arange(12.0).reshape(6, 2)
    with pytest.raises(DegenerateVariance) as info:
        cusum_profile(X, 0, [1.0, 0.0])
    assert info.value.component == 1
    with pytest.raises(ValueError):
        cusum_profile(X, 0.25, [1.0, 1.0])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
