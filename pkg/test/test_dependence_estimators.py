#!/usr/bin/env python3
"""
Tests for the trace, bias, scale and long-run variance estimators.

The brute-force checks transcribe each estimator literally with nested loops
on tiny panels and compare against the vectorized versions.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to Python path to access libs
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from libs.dependence_estimators import (
    _mu_hat_from_traces,
    cross_difference,
    difference_sequence,
    estimate_dependence,
    estimate_mu_hat,
    estimate_omega_hat,
    estimate_sigma_componentwise,
    estimate_trace_gamma,
    estimate_trace_product,
    estimate_trace_products,
    kernel_weights,
    omega_from_products,
    pair_weight_sums,
    sigma_with_floor_flags,
)
from libs.errors import ConfigError, WindowTooShort

slow = pytest.mark.skipif(os.environ.get("HDCP_RUN_SLOW") != "1",
                          reason="set HDCP_RUN_SLOW=1 for Monte Carlo checks")


def _panel(seed, n=12, p=3):
    return np.random.default_rng(seed).standard_normal((n, p))


def _naive_trace_gamma(X, h, M):
    n = X.shape[0]
    total = 0.0
    for t in range(1, n - M - 2 * h):
        total += cross_difference(X, t + h, h, t, h, M)
    return total / (2 * n)


def _naive_trace_product(X, h, k, M):
    n = X.shape[0]
    half = n // 2
    total = 0.0
    for t in range(1, half - M - 2 * k):
        for s in range(t + half, n - M - 2 * k):
            total += cross_difference(X, t, h, s, k, M) * cross_difference(X, t + h, h, s + k, k, M)
    return total / (4 * (n - k - 1.5 * half - M / 2) * (half - M - 2 * k - 1))


def _naive_mu_hat(X, traces):
    n, p = X.shape
    out = []
    for k in range(1, n):
        a = [1.0 / k if i <= k else -1.0 / (n - k) for i in range(1, n + 1)]
        total = 0.0
        for h, trace in enumerate(traces):
            inner = sum(a[i] * a[i + h] for i in range(n - h))
            total += (1 if h == 0 else 2) * inner * trace
        out.append(k ** 2 * (n - k) ** 2 / (n ** 3 * math.sqrt(p)) * total)
    return np.array(out)


def test_cross_difference_hand_example():
    X = np.arange(1.0, 7.0).reshape(-1, 1)
    assert cross_difference(X, 1, 0, 2, 0, 1) == 4.0
    assert cross_difference(X, 2, 1, 2, 1, 1) >= 0.0
    with pytest.raises(IndexError):
        cross_difference(X, 4, 1, 1, 0, 1)


def test_constant_panel_gives_zero_everywhere():
    X = np.full((20, 3), 2.5)
    deps = estimate_dependence(X, M=1, with_sigma=False)
    assert np.all(deps.trace_gamma == 0.0)
    assert np.all(deps.trace_products == 0.0)
    assert np.all(deps.mu_hat == 0.0)
    assert deps.degenerate_scale is True
    assert cross_difference(X, 1, 0, 5, 1, 1) == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_trace_gamma_matches_loops(seed):
    X = _panel(seed)
    for h in range(3):
        assert estimate_trace_gamma(X, h, 1) == pytest.approx(_naive_trace_gamma(X, h, 1), rel=1e-10)


def test_trace_gamma_window():
    with pytest.raises(WindowTooShort):
        estimate_trace_gamma(_panel(0, n=5), 2, 1)


def test_pair_weight_sums_closed_form():
    n = 11
    for h in range(4):
        closed = pair_weight_sums(n, h)
        for k in range(1, n):
            a = [1.0 / k if i <= k else -1.0 / (n - k) for i in range(1, n + 1)]
            naive = sum(a[i] * a[i + h] for i in range(n - h))
            assert closed[k - 1] == pytest.approx(naive, abs=1e-12)


@pytest.mark.parametrize("seed", [3, 4])
def test_mu_hat_matches_loops(seed):
    X = _panel(seed)
    traces = [estimate_trace_gamma(X, h, 2) for h in range(3)]
    assert np.allclose(estimate_mu_hat(X, 2), _naive_mu_hat(X, traces), rtol=1e-10, atol=1e-14)


def test_mu_hat_identity_contribution():
    # only the h=0 term with trace p: k(n-k) sqrt(p) / n^2
    n, p = 15, 4
    k = np.arange(1, n)
    got = _mu_hat_from_traces(n, p, np.array([float(p)]))
    assert np.allclose(got, k * (n - k) * math.sqrt(p) / n ** 2)


@pytest.mark.parametrize("seed", [5, 6])
def test_trace_products_match_loops(seed):
    X = _panel(seed)
    for h in range(2):
        for k in range(2):
            assert estimate_trace_product(X, h, k, 1) == pytest.approx(
                _naive_trace_product(X, h, k, 1), rel=1e-10)


def test_trace_product_window():
    with pytest.raises(WindowTooShort):
        estimate_trace_product(_panel(0, n=8), 0, 2, 1)


def test_omega_matches_bracket_and_is_homogeneous():
    X = _panel(7, n=40, p=5)
    products = estimate_trace_products(X, 1)
    bracket = products[0, 0] + 2 * products[1, 0] + 2 * products[0, 1] + 4 * products[1, 1]
    omega, degenerate = omega_from_products(products, 5)
    if bracket > 0:
        assert omega == pytest.approx(math.sqrt(2 / 5 * bracket), rel=1e-12)
        assert not degenerate
        assert estimate_omega_hat(3.0 * X, 1) == pytest.approx(9.0 * omega, rel=1e-12)


def test_omega_floor_flags_degenerate():
    omega, degenerate = omega_from_products(-np.ones((2, 2)), 3)
    assert degenerate
    assert omega == pytest.approx(1e-6)


def test_parallel_products_equal_serial():
    X = _panel(12, n=30, p=4)
    assert np.array_equal(estimate_trace_products(X, 1, n_jobs=1), estimate_trace_products(X, 1, n_jobs=2))


def test_sigma_matches_loops():
    X = _panel(13)
    d = (1 / math.sqrt(2), -1 / math.sqrt(2))
    got = estimate_sigma_componentwise(X, order=1, lag_step=1, bandwidth=2, coefficients=d)
    n = X.shape[0]
    for j in range(X.shape[1]):
        D = [d[0] * X[i, j] + d[1] * X[i - 1, j] for i in range(1, n)]
        g0 = sum(v * v for v in D) / n
        g1 = sum(D[i] * D[i - 1] for i in range(1, len(D))) / n
        variance = max(g0 + 2 * 0.5 * g1, 1e-12)
        assert got[j] == pytest.approx(math.sqrt(variance), rel=1e-10)


def test_sigma_level_invariance():
    X = _panel(14, n=120, p=3)
    moved = X + np.array([100.0, -7.0, 0.0])
    assert np.allclose(estimate_sigma_componentwise(moved), estimate_sigma_componentwise(X), rtol=1e-9)


def test_sigma_resists_level_shift():
    x = np.zeros((1000, 1))
    x[500:] = 10.0
    assert estimate_sigma_componentwise(x)[0] < x.std()


def test_sigma_white_noise_near_one():
    X = np.random.default_rng(15).standard_normal((1000, 20))
    assert abs(estimate_sigma_componentwise(X).mean() - 1.0) < 0.15


def test_sigma_floor_flags_constant_components():
    X = _panel(16, n=100, p=3)
    X[:, 1] = 4.0
    sigma, floored = sigma_with_floor_flags(X)
    assert floored == (1,)
    assert sigma[1] == pytest.approx(1e-6)
    assert np.all(sigma > 0)


def test_sigma_window_and_configuration_errors():
    with pytest.raises(WindowTooShort):
        estimate_sigma_componentwise(_panel(0, n=12))
    with pytest.raises(ConfigError):
        estimate_sigma_componentwise(_panel(0, n=100), order=2)
    with pytest.raises(ConfigError):
        difference_sequence([0.5, 0.5])
    with pytest.raises(ConfigError):
        kernel_weights("parzen", np.arange(3), 3)


def test_kernel_weights():
    assert np.allclose(kernel_weights("bartlett", np.arange(4), 4), [1.0, 0.75, 0.5, 0.25])
    qs = kernel_weights("quadratic_spectral", np.arange(4), 4)
    assert qs[0] == 1.0
    assert np.all(np.abs(qs) <= 1.0)


def test_trace_gamma_lag_zero_expectation():
    n, p, M, reps = 50, 5, 1, 300
    rng = np.random.default_rng(17)
    values = [estimate_trace_gamma(rng.standard_normal((n, p)), 0, M) for _ in range(reps)]
    assert abs(np.mean(values) - (n - M - 1) * p / n) < 0.3


@slow
def test_omega_near_root_two_for_white_noise():
    rng = np.random.default_rng(18)
    values = [estimate_omega_hat(rng.standard_normal((400, 100)), 2) for _ in range(40)]
    assert abs(np.mean(values) / math.sqrt(2) - 1) < 0.10


@slow
def test_sigma_ma1_long_run_deviation():
    rng = np.random.default_rng(19)
    z = rng.standard_normal((2001, 40))
    x = z[1:] + 0.5 * z[:-1]
    assert abs(estimate_sigma_componentwise(x).mean() / 1.5 - 1) < 0.15


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
