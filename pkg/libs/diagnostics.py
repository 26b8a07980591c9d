"""
Per-series screening of a panel before change-point testing: Ljung-Box
tests for zero autocorrelation and the histogram of their p-values.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from libs.data_model import as_array
from libs.errors import DegenerateSeries, DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LjungBoxResult:
    """Portmanteau statistic and chi-square p-value of one series."""

    series_index: int
    Q_stat: float
    lags_used: int
    p_value: float

    def to_dict(self) -> dict:
        return {"series_index": self.series_index, "Q_stat": self.Q_stat,
                "lags_used": self.lags_used, "p_value": self.p_value}


@dataclass(frozen=True)
class ScreeningReport:
    """Ljung-Box results over every non-constant series of a panel."""

    lags: int
    alpha: float
    series: List[LjungBoxResult]
    rejection_fraction: float
    bins: int
    counts: List[int]
    skipped: List[int]


def default_lags(n: int) -> int:
    """min(10, n // 5), at least one lag."""
    return max(1, min(10, n // 5))


def ljung_box(series, L: int, series_index: int = 0) -> LjungBoxResult:
    """
    Q = n (n + 2) sum_{k=1}^{L} rho_k^2 / (n - k), chi-squared with L dof.

    Raises:
        DomainError: L outside 1..n-1.
        DegenerateSeries: the series is constant.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if not 1 <= L < n:
        raise DomainError(f"lag count L={L} must satisfy 1 <= L < n={n}")
    centred = x - x.mean()
    denominator = np.dot(centred, centred)
    if not denominator > 0:
        raise DegenerateSeries(f"series {series_index} is constant")
    k = np.arange(1, L + 1)
    rho = np.array([np.dot(centred[:-lag], centred[lag:]) for lag in k]) / denominator
    Q = float(n * (n + 2) * np.sum(rho ** 2 / (n - k)))
    return LjungBoxResult(series_index, Q, L, float(stats.chi2.sf(Q, L)))


def pvalue_histogram(p_values, bins: int = 10) -> List[int]:
    """Equal-width bin counts on [0, 1]; the last bin is closed on the right."""
    values = np.asarray(p_values, dtype=np.float64).reshape(-1)
    if bins < 1:
        raise DomainError(f"bins must be positive, got {bins}")
    if np.any((values < 0) | (values > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return [int(c) for c in counts]


def _screen_one(values: np.ndarray, j: int, L: int) -> Optional[LjungBoxResult]:
    try:
        return ljung_box(values[:, j], L, j)
    except DegenerateSeries:
        return None


def screen_panel(data, L: int = None, alpha: float = 0.05, bins: int = 10,
                 n_jobs: int = 1) -> ScreeningReport:
    """
    Ljung-Box test on every column.

    Constant columns are skipped and listed in `skipped`; the rejection
    fraction and histogram use the remaining series.
    """
    values = as_array(data)
    n, p = values.shape
    L = default_lags(n) if L is None else L
    if not 1 <= L < n:
        raise DomainError(f"lag count L={L} must satisfy 1 <= L < n={n}")

    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_screen_one)(values, j, L) for j in range(p)
    )
    series = [r for r in results if r is not None]
    skipped = [j for j, r in enumerate(results) if r is None]
    if skipped:
        logger.warning("skipped %d constant series", len(skipped))
    p_values = [r.p_value for r in series]
    fraction = float(np.mean([pv < alpha for pv in p_values])) if p_values else 0.0
    return ScreeningReport(L, alpha, series, fraction, bins, pvalue_histogram(p_values, bins), skipped)
