"""
Temporal-Dependence Nuisance Estimators

Estimates the quantities that standardize the CUSUM statistics under serial
dependence:

- tr{Gamma(h)}, h = 0..M: moving-range estimator built from differences of
  observations M+h+1 steps apart
- tr{Gamma(h) Gamma(k)}, h, k = 0..M: split-sample double sum over
  observation pairs at least [n/2] apart
- mu_hat_{M,k}: bias profile of W(k), k = 1..n-1
- omega_hat: scale of the limiting Gaussian process of W(k) - mu_{M,k}
- sigma_hat_j: componentwise long-run standard deviations from the
  m-th order lag-h difference estimator with kernel smoothing

Index convention follows the method description: X_1..X_n are the rows of
the panel, so X_f lives at array row f-1.

All trace estimators vanish exactly on constant panels because every
summand is an inner product of differences.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from libs.data_model import DEFAULT_DIFFERENCE_COEFFICIENTS, as_array, ceil_root
from libs.errors import ConfigError, WindowTooShort

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12

# Near-origin exponent of each supported kernel; sets the bandwidth rate
KERNEL_ORDER = {"bartlett": 1, "quadratic_spectral": 2}


@dataclass(frozen=True)
class DependenceEstimates:
    """Everything the dependence estimators learn from one panel.

    trace_gamma[h] estimates tr(Gamma(h)) for h = 0..M, trace_products[h1, h2]
    estimates tr(Gamma(h1) Gamma(h2)), and sigma_hat holds the componentwise
    long-run standard deviations when normalization was requested.
    """

    M: int
    trace_gamma: np.ndarray
    trace_products: np.ndarray
    mu_hat: np.ndarray
    omega_hat: float
    sigma_hat: Optional[np.ndarray] = None
    degenerate_scale: bool = False
    floored_components: Tuple[int, ...] = field(default_factory=tuple)


def cross_difference(data, f: int, h: int, g: int, k: int, M: int) -> float:
    """(X_f - X_{f+M+h+1})^T (X_g - X_{g+M+k+1}) with 1-based f and g."""
    values = as_array(data)
    n = values.shape[0]
    if f < 1 or g < 1 or f + M + h + 1 > n or g + M + k + 1 > n:
        raise IndexError(f"cross difference ({f}, {h}, {g}, {k}) with M={M} exceeds n={n}")
    left = values[f - 1] - values[f + M + h]
    right = values[g - 1] - values[g + M + k]
    return float(np.dot(left, right))


def _lag_differences(values: np.ndarray, lag: int, M: int) -> np.ndarray:
    """Rows X_t - X_{t+M+lag+1} for t = 1..n-M-lag-1."""
    span = M + lag + 1
    return values[:-span] - values[span:]


def estimate_trace_gamma(data, h: int, M: int) -> float:
    """Estimate tr(Gamma(h)) from products of lagged row differences.

    Args:
        data: (n, p) panel
        h: lag, 0 <= h <= M
        M: dependence window

    Returns:
        The scalar estimate; it is unbiased under a single mean shift.

    Raises:
        WindowTooShort: when the summation range is empty
    """
    values = as_array(data)
    n = values.shape[0]
    T = n - M - 2 * h - 1
    if T < 1:
        raise WindowTooShort("trace of Gamma(h)", h, n)
    diffs = _lag_differences(values, h, M)
    # summand t pairs X_{t+h} - X_{t+M+2h+1} with X_t - X_{t+M+h+1}
    products = (diffs[h:h + T] * diffs[:T]).sum(axis=1)
    return float(products.sum() / (2.0 * n))


def pair_weight_sums(n: int, h: int) -> np.ndarray:
    """
    sum_{i=1}^{n-h} a_{i,k} a_{i+h,k} for every k = 1..n-1, in closed form.

    Pairs (i, i+h) are counted by where they fall relative to the break:
    both before, both after, or straddling it.
    """
    k = np.arange(1, n, dtype=np.int64)
    kf = k.astype(np.float64)
    if h == 0:
        return 1.0 / kf + 1.0 / (n - kf)
    before = np.maximum(0, k - h)
    after = np.maximum(0, n - h - k)
    straddle = np.maximum(0, np.minimum(k, n - h) - np.maximum(1, k - h + 1) + 1)
    return before / kf ** 2 + after / (n - kf) ** 2 - straddle / (kf * (n - kf))


def _mu_hat_from_traces(n: int, p: int, trace_gamma: np.ndarray) -> np.ndarray:
    k = np.arange(1, n, dtype=np.float64)
    total = np.zeros(n - 1, dtype=np.float64)
    for h, trace in enumerate(trace_gamma):
        total += (1.0 if h == 0 else 2.0) * pair_weight_sums(n, h) * trace
    return k ** 2 * (n - k) ** 2 / (n ** 3 * math.sqrt(p)) * total


def estimate_mu_hat(data, M: int) -> np.ndarray:
    """Bias profile mu_hat_{M,k} for k = 1..n-1."""
    values = as_array(data)
    n, p = values.shape
    traces = np.array([estimate_trace_gamma(values, h, M) for h in range(M + 1)])
    return _mu_hat_from_traces(n, p, traces)


def estimate_trace_product(data, h: int, k: int, M: int) -> float:
    """
    Split-sample estimator of tr{Gamma(h) Gamma(k)}.

    The t range is bounded by lag k exactly as in the published estimator.
    """
    values = as_array(data)
    n = values.shape[0]
    half = n // 2
    T = half - M - 2 * k - 1
    s_max = n - M - 2 * k - 1
    denominator = 4.0 * (n - k - 1.5 * half - M / 2.0) * T
    if T < 1 or 1 + half > s_max or denominator <= 0 or T > n - M - 2 * h - 1:
        raise WindowTooShort("trace of Gamma(h) Gamma(k)", max(h, k), n)

    diffs_h = _lag_differences(values, h, M)
    diffs_k = _lag_differences(values, k, M)
    first = diffs_h[:T] @ diffs_k[:s_max].T
    second = diffs_h[h:h + T] @ diffs_k[k:k + s_max].T
    # keep s >= t + [n/2]
    region = np.triu(np.ones((T, s_max), dtype=bool), half)
    summands = np.where(region, first * second, 0.0)
    return float(summands.sum(axis=1).sum() / denominator)


def estimate_trace_products(data, M: int, n_jobs: int = 1) -> np.ndarray:
    """(M+1) x (M+1) matrix of tr{Gamma(h) Gamma(k)} estimates."""
    values = as_array(data)
    pairs = [(h, k) for h in range(M + 1) for k in range(M + 1)]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(estimate_trace_product)(values, h, k, M) for h, k in pairs
    )
    products = np.empty((M + 1, M + 1), dtype=np.float64)
    for (h, k), value in zip(pairs, results):
        products[h, k] = value
    return products


def omega_from_products(products: np.ndarray, p: int) -> Tuple[float, bool]:
    """
    omega_hat from the trace-product matrix; returns (omega_hat, degenerate).

    The third sum is read as sum_k tr{Gamma(0) Gamma(k)}, symmetric to the
    second. A non-positive bracket is floored and reported as degenerate.
    """
    bracket = (
        products[0, 0]
        + 2.0 * products[1:, 0].sum()
        + 2.0 * products[0, 1:].sum()
        + 4.0 * products[1:, 1:].sum()
    )
    squared = 2.0 / p * bracket
    if not squared > 0:
        logger.warning("omega_hat bracket %.3g is not positive; flooring at %g",
                       squared, VARIANCE_FLOOR)
        return math.sqrt(VARIANCE_FLOOR), True
    return math.sqrt(squared), False


def estimate_omega_hat(data, M: int, n_jobs: int = 1) -> float:
    """Variance scale omega_hat of the L2 statistic, built from the trace products."""
    values = as_array(data)
    omega, _ = omega_from_products(estimate_trace_products(values, M, n_jobs), values.shape[1])
    return omega


def kernel_weights(kind: str, lags: np.ndarray, bandwidth: int) -> np.ndarray:
    """K(lag / bandwidth) for the Bartlett or quadratic-spectral kernel."""
    x = np.abs(np.asarray(lags, dtype=np.float64)) / bandwidth
    if kind == "bartlett":
        return np.clip(1.0 - x, 0.0, None)
    if kind == "quadratic_spectral":
        weights = np.ones_like(x)
        nz = x > 0
        z = 6.0 * np.pi * x[nz] / 5.0
        weights[nz] = 25.0 / (12.0 * np.pi ** 2 * x[nz] ** 2) * (np.sin(z) / z - np.cos(z))
        return weights
    raise ConfigError(f"unknown kernel {kind!r}")


def default_bandwidth(n: int, kernel: str = "bartlett") -> int:
    """ceil(n ** (1 / (1 + 2 q))) with q the kernel's near-origin order."""
    return ceil_root(n, 1 + 2 * KERNEL_ORDER[kernel])


def difference_sequence(coefficients: Sequence[float]) -> np.ndarray:
    """
    Validate a difference sequence and project it onto sum 0, squared norm 1.

    Published coefficient tables are rounded to four digits, so a tolerance of
    1e-3 is accepted before the exact projection.
    """
    d = np.asarray(coefficients, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] < 2:
        raise ConfigError("difference sequence needs at least two coefficients")
    if abs(d.sum()) > 1e-3 or abs(np.dot(d, d) - 1.0) > 1e-3:
        raise ConfigError(f"difference sequence {tuple(d)} must sum to 0 with unit norm")
    d = d - d.mean()
    return d / np.linalg.norm(d)


def _long_run_variances(values: np.ndarray, coefficients: Sequence[float],
                        lag_step: Optional[int], kernel: str,
                        bandwidth: Optional[int]) -> np.ndarray:
    n = values.shape[0]
    d = difference_sequence(coefficients)
    m = d.shape[0] - 1
    ell = bandwidth if bandwidth is not None else default_bandwidth(n, kernel)
    step = lag_step if lag_step is not None else ell
    if ell < 1 or step < 1:
        raise ConfigError(f"bandwidth and lag step must be positive, got {ell} and {step}")
    if n <= m * step + ell:
        raise WindowTooShort("difference-based long-run variance", m * step + ell, n)

    # D_i = sum_s d_s X_{i - s*step}, i = m*step+1..n
    length = n - m * step
    D = np.zeros((length, values.shape[1]), dtype=np.float64)
    for s, coefficient in enumerate(d):
        start = m * step - s * step
        D += coefficient * values[start:start + length]

    lags = np.arange(ell)
    weights = kernel_weights(kernel, lags, ell)
    variance = weights[0] * np.square(D).sum(axis=0) / n
    for lag in lags[1:]:
        gamma = (D[lag:] * D[:length - lag]).sum(axis=0) / n
        variance += 2.0 * weights[lag] * gamma
    return variance


def estimate_sigma_componentwise(data, order: int = 3, lag_step: Optional[int] = None,
                                 kernel: str = "bartlett", bandwidth: Optional[int] = None,
                                 coefficients: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Componentwise long-run standard deviations sigma_hat_j.

    Args:
        data: n x p panel.
        order (int): difference order m; must match len(coefficients) - 1.
        lag_step (int, optional): spacing h of the differences; defaults to
                                  the bandwidth so that lagged difference
                                  terms do not overlap inside the kernel
                                  window.
        kernel (str): "bartlett" or "quadratic_spectral".
        bandwidth (int, optional): defaults to ceil(n ** (1/(1+2q))).
        coefficients: difference sequence; defaults to the third-order
                      sequence (0.1942, 0.2809, 0.3832, -0.8582).

    Returns:
        Length-p array, every entry > 0 (non-positive kernel sums are
        floored at 1e-12 before the square root).
    """
    if coefficients is None:
        coefficients = DEFAULT_DIFFERENCE_COEFFICIENTS
    if len(coefficients) != order + 1:
        raise ConfigError(f"order {order} needs {order + 1} coefficients, got {len(coefficients)}")
    sigma, _ = sigma_with_floor_flags(data, coefficients, lag_step, kernel, bandwidth)
    return sigma


def sigma_with_floor_flags(data, coefficients: Sequence[float] = DEFAULT_DIFFERENCE_COEFFICIENTS,
                           lag_step: Optional[int] = None, kernel: str = "bartlett",
                           bandwidth: Optional[int] = None) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """sigma_hat together with the 0-based components whose variance was floored."""
    variances = _long_run_variances(as_array(data), coefficients, lag_step, kernel, bandwidth)
    floored = tuple(int(j) for j in np.flatnonzero(~(variances > VARIANCE_FLOOR)))
    if floored:
        logger.warning("long-run variance floored for %d component(s)", len(floored))
    return np.sqrt(np.maximum(variances, VARIANCE_FLOOR)), floored


def estimate_dependence(data, M: int, coefficients: Sequence[float] = DEFAULT_DIFFERENCE_COEFFICIENTS,
                        lag_step: Optional[int] = None, kernel: str = "bartlett",
                        bandwidth: Optional[int] = None, with_sigma: bool = True,
                        with_scale: bool = True, n_jobs: int = 1) -> DependenceEstimates:
    """
    All nuisance estimates for one panel.

    with_scale=False skips the trace products and omega_hat (omega_hat is then
    nan); with_sigma=False skips the componentwise long-run deviations.
    """
    values = as_array(data)
    n, p = values.shape
    trace_gamma = np.array([estimate_trace_gamma(values, h, M) for h in range(M + 1)])
    mu_hat = _mu_hat_from_traces(n, p, trace_gamma)

    products = np.full((M + 1, M + 1), np.nan)
    omega, degenerate = math.nan, False
    if with_scale:
        products = estimate_trace_products(values, M, n_jobs)
        omega, degenerate = omega_from_products(products, p)

    sigma, floored = None, ()
    if with_sigma:
        sigma, floored = sigma_with_floor_flags(values, coefficients, lag_step, kernel, bandwidth)

    logger.debug("dependence estimates: M=%d omega_hat=%.6g", M, omega)
    return DependenceEstimates(M, trace_gamma, products, mu_hat, omega, sigma,
                               degenerate, floored)
