"""
CUSUM Building Blocks

Partial sums, the contrast weights a_{i,k}, the quadratic CUSUM statistic
W(k) and the componentwise CUSUM statistics C_{gamma,j}(k).

Notation (1-based time index as in the method description):
    S_k     = sum_{i<=k} X_i                  (prefix sums, S_0 = 0)
    U_k     = S_k - (k/n) S_n                 (CUSUM contrast, k = 1..n-1)
    W(k)    = ||U_k||^2 / (n sqrt(p))
    C_gj(k) = {(k/n)(1-k/n)}^(-gamma) n^(-1/2) U_kj / sigma_j

All scans run over the integer break candidates k = 1..n-1; the end points
k = 0 and k = n have a vanishing contrast and are skipped. Row k-1 of every
(n-1)-row array in this module belongs to break candidate k.

The contrast is formed from prefix sums of X_i - X_1. U_k is unchanged by a
common shift of all rows, and a constant panel of any value gives exact
zeros.
"""

import logging
from dataclasses import dataclass

import numpy as np

from libs.data_model import as_array
from libs.errors import DegenerateVariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartialSums:
    """
    Prefix sums of a panel, kept relative to its first row.

    centered[k] = sum_{i<=k} (X_i - X_1) with centered[0] = 0, and origin is
    X_1. The CUSUM contrast only sees centered, so a constant panel gives an
    exactly zero contrast whatever its value.
    """

    centered: np.ndarray
    origin: np.ndarray

    @property
    def S(self) -> np.ndarray:
        """Raw prefix sums, S[0] = 0 and S[k] - S[k-1] = X_k."""
        counts = np.arange(self.centered.shape[0], dtype=np.float64)[:, None]
        return self.centered + counts * self.origin[None, :]

    @property
    def n(self) -> int:
        return self.centered.shape[0] - 1

    @property
    def p(self) -> int:
        return self.centered.shape[1]


@dataclass(frozen=True)
class CusumProfile:
    """C_{gamma,j}(k) for k = 1..n-1 (rows) and j = 1..p (columns)."""

    gamma: float
    values: np.ndarray
    sigma_hat: np.ndarray


def partial_sums(data) -> PartialSums:
    """
    Prefix sums of an n x p panel, shared by every CUSUM scan of that panel.

    Returns:
        PartialSums: centered sums of shape (n+1, p) and the first row.
    """
    values = as_array(data)
    origin = values[0].astype(np.float64, copy=True)
    centered = np.zeros((values.shape[0] + 1, values.shape[1]), dtype=np.float64)
    np.cumsum(values - origin[None, :], axis=0, out=centered[1:])
    return PartialSums(centered, origin)


def _check_index(n: int, k: int) -> None:
    if not 1 <= k <= n - 1:
        raise IndexError(f"break candidate k={k} outside 1..{n - 1}")


def contrast_weights(n: int, k: int) -> np.ndarray:
    """a_{i,k} = 1/k for i <= k and -1/(n-k) for i > k; sums to zero."""
    _check_index(n, k)
    weights = np.empty(n, dtype=np.float64)
    weights[:k] = 1.0 / k
    weights[k:] = -1.0 / (n - k)
    return weights


def cusum_contrast(data, sums: PartialSums = None) -> np.ndarray:
    """(n-1) x p matrix of U_k = S_k - (k/n) S_n."""
    if sums is None:
        sums = partial_sums(data)
    n = sums.n
    k = np.arange(1, n, dtype=np.float64)[:, None]
    D = sums.centered
    return D[1:n] - (k * D[n]) / n


def W_profile(data, sums: PartialSums = None) -> np.ndarray:
    """Vector of W(k), k = 1..n-1."""
    if sums is None:
        sums = partial_sums(data)
    contrast = cusum_contrast(data, sums)
    # row-wise reduction over the contiguous p axis uses pairwise summation
    return np.square(contrast).sum(axis=1) / (sums.n * np.sqrt(sums.p))


def compute_W(data, k: int, sums: PartialSums = None) -> float:
    """
    W(k) for a single break candidate.

    Raises:
        IndexError: k outside 1..n-1.
    """
    if sums is None:
        sums = partial_sums(data)
    n = sums.n
    _check_index(n, k)
    u = sums.centered[k] - (k * sums.centered[n]) / n
    return float(np.square(u).sum() / (n * np.sqrt(sums.p)))


def cusum_profile(data, gamma: float, sigma_hat, sums: PartialSums = None) -> CusumProfile:
    """
    Componentwise CUSUM statistics C_{gamma,j}(k).

    Args:
        data: n x p panel.
        gamma (float): 0 (unweighted) or 0.5 (boundary weighted).
        sigma_hat: length-p vector of long-run standard deviations, all > 0.

    Raises:
        DegenerateVariance: some sigma_hat[j] <= 0 (j reported 0-based).
    """
    if gamma not in (0, 0.5):
        raise ValueError(f"gamma must be 0 or 0.5, got {gamma}")
    if sums is None:
        sums = partial_sums(data)
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64).reshape(-1)
    if sigma_hat.shape[0] != sums.p:
        raise ValueError(f"sigma_hat has length {sigma_hat.shape[0]}, expected {sums.p}")
    for j, value in enumerate(sigma_hat):
        if not value > 0:
            raise DegenerateVariance(j, float(value))

    n = sums.n
    frac = np.arange(1, n, dtype=np.float64) / n
    scale = 1.0 / np.sqrt(n)
    if gamma:
        scale = scale * (frac * (1.0 - frac)) ** (-gamma)
    else:
        scale = np.full(n - 1, scale)
    values = cusum_contrast(data, sums) * scale[:, None] / sigma_hat[None, :]
    return CusumProfile(float(gamma), values, sigma_hat.copy())
