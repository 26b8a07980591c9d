"""
Data-Generating Processes and Monte Carlo Experiments

Panels follow the high-dimensional MA(M0) model

    X_i = delta 1{i > tau} + sum_{h=0}^{M0} A_h eps_{i-h},   eps_i = Sigma^(1/2) u_i

with A_0 = I and, for h >= 1, the banded matrices

    A_h(i, j) = phi / (h |i-j|^2)   for 1 <= |i-j| <= floor(p v)
    A_h(i, i) = phi / h
    A_h(i, j) = 0                   otherwise.

Scenarios:
- S1: Sigma = I_p, phi = 0.5, v = 0.5
- S2: Sigma(i, j) = 0.5^|i-j|, phi = 0.2, v = 0.2

Innovations u_i are standard normal or t(4) divided by sqrt(2), so both error
laws have unit variance. M0 pre-sample innovations are drawn so X_1 already
has the stationary law.

Under the alternative, delta has s equal non-zero leading entries
c_tau sqrt(log p / (n s)), so ||delta||^2 = c_tau^2 log p / n whatever s is.

Experiments:
- size / power: per-method rejection frequency at config.alpha
- locate: mean |tau_hat - tau| / n for the adaptive and single-test estimates

Replication r draws from the random stream (seed, r); rows of the result do
not depend on the worker count.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from libs.data_model import Method, RunConfig, TimeSeriesMatrix, resolve_n_jobs, substream_rng
from libs.errors import ChangePointError, ConfigError
from libs.inference import run_battery
from libs.null_calibration import NullCalibration, load_or_build_calibration

logger = logging.getLogger(__name__)

SCENARIOS = {
    "S1": {"phi": 0.5, "v": 0.5, "rho": None},
    "S2": {"phi": 0.2, "v": 0.2, "rho": 0.5},
}

ERROR_DISTRIBUTIONS = ("normal", "t4")

MODES = ("size", "power", "locate")

MIN_EXPERIMENT_REPS = 50

CSV_COLUMNS = ("scenario", "n", "p", "M0", "error", "tau_frac", "s",
               "method", "metric", "value", "reps", "seed")

TAU_HAT = "tau_hat"
TAU_HAT_DAGGER = "tau_hat_dagger"


@dataclass(frozen=True)
class DgpSpec:
    """
    One data-generating process.

    tau_frac = 1 means no change. noise_scale multiplies the MA part and
    may be set to 0 for noiseless shifts.
    """

    n: int
    p: int
    M0: int = 0
    scenario: str = "S1"
    error_dist: str = "normal"
    tau_frac: float = 1.0
    sparsity: int = 1
    c_tau: float = 15.0
    seed: int = 0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.n < 4 or self.p < 1:
            raise ConfigError(f"need n >= 4 and p >= 1, got n={self.n}, p={self.p}")
        if self.M0 < 0:
            raise ConfigError(f"M0 must be non-negative, got {self.M0}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.error_dist not in ERROR_DISTRIBUTIONS:
            raise ConfigError(f"unknown error distribution {self.error_dist!r}")
        if not 0.0 < self.tau_frac <= 1.0:
            raise ConfigError(f"tau_frac must lie in (0, 1], got {self.tau_frac}")
        if not 1 <= self.sparsity <= self.p:
            raise ConfigError(f"sparsity must lie in 1..{self.p}, got {self.sparsity}")
        if self.noise_scale < 0:
            raise ConfigError(f"noise_scale must be non-negative, got {self.noise_scale}")
        if self.has_change and not 1 <= self.tau <= self.n - 1:
            raise ConfigError(f"tau = {self.tau} must lie in 1..{self.n - 1}")

    @property
    def has_change(self) -> bool:
        return self.tau_frac < 1.0

    @property
    def tau(self) -> int:
        return int(round(self.tau_frac * self.n))

    @property
    def phi(self) -> float:
        return SCENARIOS[self.scenario]["phi"]

    @property
    def v(self) -> float:
        return SCENARIOS[self.scenario]["v"]

    def innovation_covariance(self) -> np.ndarray:
        rho = SCENARIOS[self.scenario]["rho"]
        if rho is None:
            return np.eye(self.p)
        return ar_toeplitz(self.p, rho)


@dataclass(frozen=True)
class ExperimentRow:
    """One CSV row: a metric of one method under one data-generating setting."""

    scenario: str
    n: int
    p: int
    M0: int
    error: str
    tau_frac: float
    s: int
    method: str
    metric: str
    value: float
    reps: int
    seed: int
    c_tau: float = math.nan

    def as_list(self) -> list:
        return [getattr(self, name) for name in CSV_COLUMNS]


@dataclass(frozen=True)
class OrderingCheck:
    """Outcome of the sparse versus dense power comparison."""

    passed: bool
    failures: Tuple[str, ...]


def build_A(h: int, p: int, phi: float, v: float) -> np.ndarray:
    """Banded MA coefficient matrix A_h for h >= 1.

    The diagonal is phi / h, entries with 1 <= |i - j| <= floor(p v) are
    phi / (h |i - j|**2), everything else is zero. A_0 is the identity.
    """
    if h == 0:
        return np.eye(p)
    band = int(math.floor(p * v))
    index = np.arange(p)
    distance = np.abs(index[:, None] - index[None, :])
    A = np.zeros((p, p))
    A[distance == 0] = phi / h
    inside = (distance >= 1) & (distance <= band)
    A[inside] = phi / (h * distance[inside].astype(np.float64) ** 2)
    return A


def ar_toeplitz(p: int, rho: float) -> np.ndarray:
    """Toeplitz matrix with entries rho^|i-j|."""
    return linalg.toeplitz(rho ** np.arange(p, dtype=np.float64))


def symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root through an eigendecomposition; negative eigenvalues are clipped to zero."""
    eigenvalues, vectors = linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T


def implied_autocovariance(A: Sequence[np.ndarray], Sigma: np.ndarray, h: int) -> np.ndarray:
    """cov(X_i, X_{i+h}) = sum_{k=0}^{M0-h} A_k Sigma A_{k+h}^T."""
    M0 = len(A) - 1
    total = np.zeros_like(Sigma, dtype=np.float64)
    for k in range(0, M0 - h + 1):
        total += A[k] @ Sigma @ A[k + h].T
    return total


def alternative_delta(p: int, s: int, n: int, c_tau: float) -> np.ndarray:
    """Shift vector with s equal leading entries and squared norm c_tau**2 log(p) / n."""
    if not 1 <= s <= p:
        raise ConfigError(f"sparsity must lie in 1..{p}, got {s}")
    delta = np.zeros(p)
    delta[:s] = c_tau * math.sqrt(math.log(p) / (n * s))
    return delta


def generate(spec: DgpSpec, rep: Optional[int] = None) -> TimeSeriesMatrix:
    """Draw one n x p panel; rep selects the replication stream (seed, rep)."""
    rng = substream_rng(spec.seed) if rep is None else substream_rng(spec.seed, rep)
    rows = spec.n + spec.M0
    if spec.error_dist == "normal":
        u = rng.standard_normal((rows, spec.p))
    else:
        u = rng.standard_t(4, size=(rows, spec.p)) / math.sqrt(2.0)

    eps = u
    if spec.scenario != "S1":
        eps = u @ symmetric_sqrt(spec.innovation_covariance())

    X = np.zeros((spec.n, spec.p))
    for h in range(spec.M0 + 1):
        start = spec.M0 - h
        X += eps[start:start + spec.n] @ build_A(h, spec.p, spec.phi, spec.v).T
    X *= spec.noise_scale

    if spec.has_change:
        X[spec.tau:] += alternative_delta(spec.p, spec.sparsity, spec.n, spec.c_tau)
    return TimeSeriesMatrix(X)


def battery_evaluator(config: RunConfig, calibration: Optional[NullCalibration],
                      mode: str) -> Callable:
    """
    Default per-replication evaluator.

    size / power: method name -> reject flag (None when the method failed).
    locate: estimator name -> estimated break (None when unavailable).
    """

    def evaluate(panel, rep):
        result = run_battery(panel, config, calibration, n_jobs=1)
        if mode != "locate":
            return {r.method.value: r.reject for r in result.reports}
        found = {TAU_HAT: None, TAU_HAT_DAGGER: None}
        if result.estimate is not None:
            found[TAU_HAT] = result.estimate.tau_hat
        if result.estimate_dagger is not None:
            found[TAU_HAT_DAGGER] = result.estimate_dagger.tau_hat
        bundle = result.bundle
        found[Method.L2.value] = bundle.k_S
        found[Method.LINF_UNTRIMMED.value] = bundle.k_M
        found[Method.LINF_TRIMMED.value] = bundle.k_M_dagger
        return found

    return evaluate


def _replicate(spec: DgpSpec, rep: int, evaluate: Callable):
    try:
        return evaluate(generate(spec, rep), rep)
    except ChangePointError as exc:
        logger.info("replication %d failed: %s", rep, exc)
        return None


def run_experiment(spec: DgpSpec, reps: int, config: RunConfig = None, mode: str = "size",
                   calibration: Optional[NullCalibration] = None, n_jobs: int = None,
                   evaluate: Callable = None) -> List[ExperimentRow]:
    """
    Monte Carlo experiment over reps replications of spec.

    Args:
        spec (DgpSpec): data-generating process; spec.seed keys the streams.
        reps (int): replications (at least 50).
        config (RunConfig): battery settings.
        mode (str): "size", "power" or "locate".
        evaluate: optional replacement of the battery, called as
                  evaluate(panel, rep) -> {name: outcome or None}.

    Returns:
        One row per method with the rejection rate (size/power) or mean
        scaled location error (locate). Replications or methods that failed
        are left out of the rate; when any did, a "failures" row with their
        count follows.
    """
    if reps < MIN_EXPERIMENT_REPS:
        raise ConfigError(f"need at least {MIN_EXPERIMENT_REPS} replications, got {reps}")
    if mode not in MODES:
        raise ConfigError(f"unknown experiment mode {mode!r}")
    if mode == "locate" and not spec.has_change:
        raise ConfigError("locate mode needs tau_frac < 1")
    config = config or RunConfig()
    n_jobs = resolve_n_jobs(n_jobs if n_jobs is not None else config.n_jobs)

    if evaluate is None:
        if calibration is None and config.pvalue_mode == "empirical_cdf":
            calibration = load_or_build_calibration(None, config, n_jobs)
        evaluate = battery_evaluator(config, calibration, mode)

    logger.info("running %d %s replications: n=%d p=%d scenario=%s",
                reps, mode, spec.n, spec.p, spec.scenario)
    outcomes = Parallel(n_jobs=n_jobs)(delayed(_replicate)(spec, rep, evaluate) for rep in range(reps))

    names: List[str] = []
    for outcome in outcomes:
        for name in outcome or {}:
            if name not in names:
                names.append(name)

    metric = "mean_abs_error" if mode == "locate" else mode
    rows = []
    for name in names:
        values = [o.get(name) for o in outcomes if o is not None and o.get(name) is not None]
        failures = reps - len(values)
        if mode == "locate":
            value = float(np.mean([abs(k - spec.tau) / spec.n for k in values])) if values else math.nan
        else:
            value = float(np.mean(values)) if values else math.nan
        rows.append(_row(spec, name, metric, value, len(values)))
        if failures:
            rows.append(_row(spec, name, "failures", float(failures), reps))
    return rows


def _row(spec: DgpSpec, method: str, metric: str, value: float, reps: int) -> ExperimentRow:
    return ExperimentRow(spec.scenario, spec.n, spec.p, spec.M0, spec.error_dist, spec.tau_frac,
                         spec.sparsity, method, metric, value, reps, spec.seed, spec.c_tau)


def power_curve(spec: DgpSpec, c_tau_values: Sequence[float], reps: int,
                config: RunConfig = None, calibration: Optional[NullCalibration] = None,
                n_jobs: int = None) -> List[ExperimentRow]:
    """Power rows for each signal strength c_tau (tau_frac of spec must be < 1)."""
    rows = []
    for c_tau in c_tau_values:
        rows.extend(run_experiment(replace(spec, c_tau=float(c_tau)), reps, config, "power",
                                   calibration, n_jobs))
    return rows


def write_experiment_csv(rows: Sequence[ExperimentRow], path: str,
                         with_c_tau: bool = False) -> None:
    """
    Write experiment rows; with_c_tau appends the signal strength column
    used by power curves.
    """
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(list(CSV_COLUMNS) + (["c_tau"] if with_c_tau else []))
        for row in rows:
            cells = row.as_list() + ([row.c_tau] if with_c_tau else [])
            writer.writerow([repr(v) if isinstance(v, float) else v for v in cells])


def _rate(rows: Sequence[ExperimentRow], method: Method) -> float:
    for row in rows:
        if row.method == method.value and row.metric in ("power", "size"):
            return row.value
    raise ConfigError(f"no rejection rate for {method.value}")


def check_power_ordering(rows_sparse: Sequence[ExperimentRow], rows_dense: Sequence[ExperimentRow],
                         tolerance: float = 0.05) -> OrderingCheck:
    """
    Sparse/dense power ordering: the max-type test is stronger under sparse
    shifts, the L2 test under dense ones, and the Cauchy combination stays
    within tolerance of the better of the two in both settings.
    """
    failures = []
    linf_sparse, linf_dense = _rate(rows_sparse, Method.LINF_UNTRIMMED), _rate(rows_dense, Method.LINF_UNTRIMMED)
    l2_sparse, l2_dense = _rate(rows_sparse, Method.L2), _rate(rows_dense, Method.L2)
    if not linf_sparse > linf_dense:
        failures.append(f"max-type power sparse {linf_sparse:.3f} <= dense {linf_dense:.3f}")
    if not l2_dense > l2_sparse:
        failures.append(f"L2 power dense {l2_dense:.3f} <= sparse {l2_sparse:.3f}")
    for label, rows, l2, linf in (("sparse", rows_sparse, l2_sparse, linf_sparse),
                                  ("dense", rows_dense, l2_dense, linf_dense)):
        cc = _rate(rows, Method.CAUCHY_CC)
        if cc < max(l2, linf) - tolerance:
            failures.append(f"Cauchy combination power {cc:.3f} trails {max(l2, linf):.3f} ({label})")
    return OrderingCheck(not failures, tuple(failures))
