"""
Observation Panel, Run Configuration and Result Records

This module owns the data types shared by every other module of the
change-point inference library: the n x p observation panel, the run
configuration with the tuning rules for the lag truncation M and the
trimming parameter lambda_n, and the immutable result records produced by
the test battery.

Panel Conventions:
- Rows are time points in order (i = 1..n), columns are components (j = 1..p)
- Values are float64, finite, and the array is made read-only on construction
- n >= 4 and p >= 1

CSV Format:
- UTF-8 (a byte order mark is tolerated), comma separated
- Optional single header row
- Every data row carries the same number of cells; every cell parses as a
  finite real number

Tuning Rules:
- M = ceil(min(n, p) ** (1/8)), computed with an integer guard so perfect
  eighth powers do not round up spuriously
- lambda_n = ceil(sqrt(n)), clamped to floor(n/2)

Random Streams:
Replication-level randomness uses counter-based Philox generators keyed by
(seed, replication, ...) so any parallel schedule produces identical draws.
"""

import csv
import enum
import logging
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from libs.errors import ConfigError, ParseError, TooFewObservations

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 4

# Environment variable consulted when no explicit worker count is given
N_JOBS_ENV = "HDCP_N_JOBS"

# Third-order difference sequence for the componentwise long-run variance
DEFAULT_DIFFERENCE_COEFFICIENTS = (0.1942, 0.2809, 0.3832, -0.8582)


class Method(str, enum.Enum):
    """The five tests of the battery, valued by their result-document spelling."""
    L2 = "L2"
    LINF_UNTRIMMED = "LinfUntrimmed"
    LINF_TRIMMED = "LinfTrimmed"
    CAUCHY_CC = "CauchyCC"
    CAUCHY_CC_TRIMMED = "CauchyCCTrimmed"


# Command line spelling of each method
METHOD_FLAGS = {
    "l2": (Method.L2,),
    "linf": (Method.LINF_UNTRIMMED,),
    "linf-trim": (Method.LINF_TRIMMED,),
    "cc": (Method.CAUCHY_CC,),
    "cc-trim": (Method.CAUCHY_CC_TRIMMED,),
    "all": tuple(Method),
}


@dataclass(frozen=True)
class TimeSeriesMatrix:
    """
    Immutable n x p observation panel.

    Attributes:
        values (np.ndarray): float64 array of shape (n, p), read-only.
        column_names (tuple, optional): header labels when loaded from a CSV
                                        with a header row.
    """

    values: np.ndarray
    column_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ValueError(f"panel must be two-dimensional, got shape {values.shape}")
        if values.shape[1] < 1:
            raise ValueError("panel needs at least one component")
        if values.shape[0] < MIN_OBSERVATIONS:
            raise TooFewObservations(values.shape[0], MIN_OBSERVATIONS)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ParseError("non-finite value in panel", int(bad[0]) + 1, int(bad[1]) + 1)
        if self.column_names is not None and len(self.column_names) != values.shape[1]:
            raise ValueError("column_names length does not match the number of columns")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def as_array(data) -> np.ndarray:
    """Return the float64 (n, p) array behind a panel or an array-like."""
    if isinstance(data, TimeSeriesMatrix):
        return data.values
    values = np.asarray(data, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    return values


def ceil_root(m: int, degree: int) -> int:
    """
    Integer-exact ceil(m ** (1/degree)) for m >= 1.

    Float pow can land just above an integer at perfect powers, so the float
    guess is corrected with integer arithmetic in both directions.
    """
    if m < 1:
        raise ValueError(f"ceil_root needs m >= 1, got {m}")
    k = max(1, int(round(m ** (1.0 / degree))))
    while k ** degree < m:
        k += 1
    while k > 1 and (k - 1) ** degree >= m:
        k -= 1
    return k


def ceil_eighth_root(m: int) -> int:
    """Smallest integer r with r**8 >= m, computed without floating point."""
    return ceil_root(m, 8)


def default_m_lag(n: int, p: int) -> int:
    """Default lag window M = ceil(min(n, p) ** (1/8))."""
    return ceil_eighth_root(min(n, p))


def default_lambda(n: int) -> int:
    """ceil(sqrt(n)) clamped into [1, floor(n/2)]."""
    root = math.isqrt(n)
    if root * root < n:
        root += 1
    return max(1, min(root, n // 2))


def resolve_n_jobs(n_jobs: Optional[int] = None) -> int:
    """Explicit value, else the HDCP_N_JOBS environment variable, else 1."""
    if n_jobs is not None:
        return int(n_jobs)
    raw = os.environ.get(N_JOBS_ENV)
    if raw:
        try:
            return int(raw)
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", N_JOBS_ENV, raw)
    return 1


def substream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by (seed, *keys)."""
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class RunConfig:
    """
    Run configuration for the test battery.

    Defaults follow the simulation settings of the method: alpha = 0.05,
    M by the eighth-root rule, normalization on, T_d = B = 10000 for the
    null calibration.
    """

    alpha: float = 0.05
    m_lag: Optional[int] = None
    lambda_trim: Optional[int] = None
    normalize: bool = True
    seed: int = 0
    grid_size: int = 10000
    calib_reps: int = 10000
    pvalue_mode: str = "tail_formula"
    calibration_alpha: float = 0.05
    difference_coefficients: Tuple[float, ...] = DEFAULT_DIFFERENCE_COEFFICIENTS
    kernel: str = "bartlett"
    bandwidth: Optional[int] = None
    lag_step: Optional[int] = None
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.m_lag is not None and self.m_lag < 1:
            raise ConfigError(f"m_lag must be a positive integer, got {self.m_lag}")
        if self.lambda_trim is not None and self.lambda_trim < 1:
            raise ConfigError(f"lambda_trim must be a positive integer, got {self.lambda_trim}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.grid_size < 2:
            raise ConfigError(f"grid_size must be at least 2, got {self.grid_size}")
        if self.calib_reps < 1:
            raise ConfigError(f"calib_reps must be positive, got {self.calib_reps}")
        if self.pvalue_mode not in ("tail_formula", "empirical_cdf"):
            raise ConfigError(f"unknown pvalue_mode {self.pvalue_mode!r}")
        if not 0.0 < self.calibration_alpha < 0.5:
            raise ConfigError(f"calibration_alpha must lie in (0, 0.5), got {self.calibration_alpha}")
        if self.kernel not in ("bartlett", "quadratic_spectral"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        object.__setattr__(self, "difference_coefficients",
                           tuple(float(d) for d in self.difference_coefficients))

    def resolve(self, n: int, p: int) -> Tuple[int, int]:
        """Effective (M, lambda_n) for an n x p panel."""
        m_lag = self.m_lag if self.m_lag is not None else default_m_lag(n, p)
        lambda_n = self.lambda_trim if self.lambda_trim is not None else default_lambda(n)
        return m_lag, lambda_n

    def to_dict(self) -> Dict[str, Any]:
        echo = asdict(self)
        echo["difference_coefficients"] = list(self.difference_coefficients)
        return echo


@dataclass(frozen=True)
class TestReport:
    """
    Outcome of one test procedure.

    Either (statistic, p_value, reject) are set, or error names the failure
    that prevented this method from being evaluated.
    """

    __test__ = False  # not a pytest class

    method: Method
    statistic: Optional[float]
    p_value: Optional[float]
    reject: Optional[bool]
    config_echo: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @classmethod
    def from_pvalue(cls, method: Method, statistic: float, p_value: float,
                    alpha: float, config_echo: Dict[str, Any]) -> "TestReport":
        p_value = float(p_value)
        if not math.isfinite(p_value):
            p_value = 1.0 if p_value != -math.inf else 0.0
        p_value = min(1.0, max(0.0, p_value))
        return cls(method, float(statistic), p_value, p_value < alpha, dict(config_echo))

    @classmethod
    def failed(cls, method: Method, error: Exception,
               config_echo: Dict[str, Any]) -> "TestReport":
        return cls(method, None, None, None, dict(config_echo),
                   f"{type(error).__name__}: {error}")

    def to_dict(self) -> Dict[str, Any]:
        if self.error is not None:
            return {"method": self.method.value, "error": self.error}
        return {
            "method": self.method.value,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reject": self.reject,
        }


@dataclass(frozen=True)
class ChangePointEstimate:
    """
    Adaptive location estimate.

    candidates maps each consulted method to its argmax index; tau_hat is the
    candidate of the method selected by the p-value comparison.
    """

    tau_hat: int
    chosen_by: Method
    candidates: Dict[Method, int]
    lambda_n: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.candidates.get(self.chosen_by) != self.tau_hat:
            raise ValueError("tau_hat must equal the candidate of the selecting method")
        trimmed = self.candidates.get(Method.LINF_TRIMMED)
        if trimmed is not None and self.lambda_n is not None and self.n is not None:
            if not self.lambda_n <= trimmed <= self.n - self.lambda_n:
                raise ValueError("trimmed candidate lies outside [lambda_n, n - lambda_n]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tau_hat": self.tau_hat,
            "chosen_by": self.chosen_by.value,
            "candidates": {m.value: k for m, k in self.candidates.items()},
        }


def _read_text(filename: str) -> str:
    """Read a CSV file as text, tolerating a UTF-8 byte order mark."""
    try:
        with open(filename, "r", encoding="utf-8-sig", newline="") as file:
            return file.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"file {filename!r} is not valid UTF-8", row=1) from exc


def load_csv(path: str, has_header: bool = False) -> TimeSeriesMatrix:
    """
    Load an n x p panel from a CSV file.

    Args:
        path (str): CSV file, rows are time points, columns are components.
        has_header (bool): skip (and keep as column names) the first row.

    Returns:
        TimeSeriesMatrix with n = number of data rows, p = number of columns.

    Raises:
        ParseError: ragged row (row index) or non-numeric / non-finite cell
                    (row and column, 1-based file coordinates).
        TooFewObservations: fewer than 4 data rows.
        FileNotFoundError: path does not exist.
    """
    text = _read_text(path)
    rows = []
    header = None
    width = None
    for line_number, record in enumerate(csv.reader(text.splitlines()), start=1):
        if not record or all(not cell.strip() for cell in record):
            continue
        if has_header and header is None:
            header = tuple(cell.strip() for cell in record)
            width = len(header)
            continue
        if width is None:
            width = len(record)
        if len(record) != width:
            raise ParseError(f"expected {width} cells, found {len(record)}", row=line_number)
        parsed = []
        for column, cell in enumerate(record, start=1):
            try:
                value = float(cell.strip())
            except ValueError:
                raise ParseError(f"cell {cell.strip()!r} is not a number", line_number, column) from None
            if not math.isfinite(value):
                raise ParseError(f"cell {cell.strip()!r} is not finite", line_number, column)
            parsed.append(value)
        rows.append(parsed)

    if len(rows) < MIN_OBSERVATIONS:
        raise TooFewObservations(len(rows), MIN_OBSERVATIONS)
    logger.debug("loaded %d x %d panel from %s", len(rows), width, path)
    return TimeSeriesMatrix(np.array(rows, dtype=np.float64), header)


def write_csv(data: TimeSeriesMatrix, path: str,
              header: Optional[Sequence[str]] = None) -> None:
    """Write a panel with repr() float formatting, which round-trips exactly."""
    values = as_array(data)
    if header is None and isinstance(data, TimeSeriesMatrix):
        header = data.column_names
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        if header is not None:
            writer.writerow(list(header))
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def log_returns(prices: TimeSeriesMatrix) -> TimeSeriesMatrix:
    """Differences of natural logarithms of consecutive rows (one row shorter)."""
    values = as_array(prices)
    if np.any(values <= 0):
        bad = np.argwhere(values <= 0)[0]
        raise ParseError("log returns need strictly positive prices",
                         int(bad[0]) + 1, int(bad[1]) + 1)
    names = prices.column_names if isinstance(prices, TimeSeriesMatrix) else None
    return TimeSeriesMatrix(np.diff(np.log(values), axis=0), names)
