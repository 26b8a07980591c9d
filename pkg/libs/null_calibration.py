"""
Null Calibration of the Max-L2 and Max-Linf Tests

The max-L2 statistic S_{n,p} / omega_hat converges to max_{t in [0,1]} V(t),
where V is the centred Gaussian process with

    E{V(t) V(s)} = (1 - t)^2 s^2,   0 <= s <= t <= 1.

No closed form of the distribution of max V is known, so it is simulated on
the grid t_i = i / T_d, i = 1..T_d, and summarized two ways:

- the empirical CDF of the B simulated maxima v_b
- the tail constant c in P(max V >= u) ~ (c/u) exp(-8 u^2), fitted by
  inverting the tail formula at a single quantile

Samplers:
- "markov": V(t) = (1-t)^2 B(t^2/(1-t)^2) for a standard Brownian motion B,
  which has exactly the covariance above; one cumulative sum per path
- "cholesky": lower factor of the T_d x T_d covariance matrix, with diagonal
  jitter on factorization failure (the matrix is singular at t = 1)

Both samplers key replication b to the random stream (seed, b), so the draws
do not depend on block size or worker count.

The max-Linf tests use closed-form Gumbel normalizers instead of simulation.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from libs.data_model import RunConfig, substream_rng
from libs.errors import CalibrationError, DomainError, NormalizerDomainError

logger = logging.getLogger(__name__)

# Tail constant obtained with T_d = B = 10000 at alpha = 0.05
REFERENCE_C_HAT = 0.9345

MIN_REPS = 100
QUANTILE_PROBABILITIES = np.arange(1, 1000) / 1000.0
REDUCED_SCALE = 2000
BLOCK_SIZE = 250


@dataclass(frozen=True)
class NullCalibration:
    """
    Simulated null distribution of max V(t).

    samples may be None when the calibration was restored from an artifact
    without embedded draws; quantile_table then stands in for the ECDF.
    """

    grid_size: int
    reps: int
    seed: int
    samples: Optional[np.ndarray]
    c_hat: Optional[float] = None
    alpha_used: Optional[float] = None
    quantile_table: Optional[np.ndarray] = None
    sampler: str = "markov"
    source: str = "simulated"


@dataclass(frozen=True)
class GumbelNormalizers:
    """Normalizing constants of the untrimmed and trimmed max-Linf limits."""

    p: int
    n: int
    lambda_n: int
    log_2p: float
    h_n: float
    x: float
    A: float
    D: float

    def u_p(self, x: float) -> float:
        """Threshold u_p{exp(-x)} = sqrt((x + log 2p) / 2)."""
        return math.sqrt((x + self.log_2p) / 2.0)


def gp_covariance(s: float, t: float) -> float:
    """Covariance of the limiting Gaussian process at grid times s and t in [0, 1]."""
    if not (0.0 <= s <= 1.0 and 0.0 <= t <= 1.0):
        raise DomainError(f"grid times must lie in [0, 1], got s={s}, t={t}")
    lo, hi = min(s, t), max(s, t)
    return (1.0 - hi) ** 2 * lo ** 2


def grid_covariance(grid_size: int) -> np.ndarray:
    """Covariance matrix of the process on the grid 1/T, 2/T, ..., 1."""
    t = np.arange(1, grid_size + 1) / grid_size
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    return (1.0 - hi) ** 2 * lo ** 2


def _markov_block(grid_size: int, seed: int, first: int, last: int) -> np.ndarray:
    t = np.arange(1, grid_size) / grid_size
    clock = (t / (1.0 - t)) ** 2
    steps = np.sqrt(np.diff(clock, prepend=0.0))
    envelope = (1.0 - t) ** 2
    maxima = np.empty(last - first)
    for row, b in enumerate(range(first, last)):
        z = substream_rng(seed, b).standard_normal(grid_size - 1)
        path = envelope * np.cumsum(steps * z)
        # V(1) = 0 belongs to the grid
        maxima[row] = max(path.max(), 0.0)
    return maxima


def cholesky_factor(covariance: np.ndarray, jitter: float = 1e-12, attempts: int = 6) -> np.ndarray:
    """Lower Cholesky factor, adding growing diagonal jitter on failure."""
    try:
        return linalg.cholesky(covariance, lower=True)
    except linalg.LinAlgError:
        pass
    identity = np.eye(covariance.shape[0])
    for attempt in range(attempts):
        level = jitter * 10 ** attempt
        try:
            factor = linalg.cholesky(covariance + level * identity, lower=True)
            logger.debug("covariance factorized with jitter %g", level)
            return factor
        except linalg.LinAlgError:
            continue
    raise CalibrationError("grid covariance could not be factorized even with jitter")


def _cholesky_block(factor: np.ndarray, seed: int, first: int, last: int) -> np.ndarray:
    grid_size = factor.shape[0]
    z = np.empty((last - first, grid_size))
    for row, b in enumerate(range(first, last)):
        z[row] = substream_rng(seed, b).standard_normal(grid_size)
    return (z @ factor.T).max(axis=1)


def sample_max_gp(grid_size: int, reps: int, seed: int, sampler: str = "markov",
                  n_jobs: int = 1) -> NullCalibration:
    """
    Draw B maxima of V over the grid {i / T_d}.

    Returns a NullCalibration with sorted samples and a quantile table; c_hat
    is filled by fit_c_hat / calibrate.
    """
    if grid_size < 2:
        raise CalibrationError(f"grid size must be at least 2, got {grid_size}")
    if reps < MIN_REPS:
        raise CalibrationError(f"need at least {MIN_REPS} replications, got {reps}")
    blocks = [(first, min(first + BLOCK_SIZE, reps)) for first in range(0, reps, BLOCK_SIZE)]

    if sampler == "markov":
        tasks = (delayed(_markov_block)(grid_size, seed, a, b) for a, b in blocks)
    elif sampler == "cholesky":
        factor = cholesky_factor(grid_covariance(grid_size))
        tasks = (delayed(_cholesky_block)(factor, seed, a, b) for a, b in blocks)
    else:
        raise CalibrationError(f"unknown sampler {sampler!r}")

    logger.info("simulating %d maxima on a %d-point grid (%s sampler)", reps, grid_size, sampler)
    samples = np.sort(np.concatenate(Parallel(n_jobs=n_jobs)(tasks)))
    return NullCalibration(grid_size, reps, seed, samples,
                           quantile_table=np.quantile(samples, QUANTILE_PROBABILITIES),
                           sampler=sampler)


def fit_c_hat(calibration: NullCalibration, alpha: float) -> float:
    """Invert the tail formula at the empirical (1 - alpha) quantile q: c = alpha q exp(8 q^2)."""
    if not 0.0 < alpha < 0.5:
        raise CalibrationError(f"alpha must lie in (0, 0.5), got {alpha}")
    if calibration.samples is None:
        raise CalibrationError("c_hat needs the simulated samples")
    samples = calibration.samples
    q = float(np.quantile(samples, 1.0 - alpha))
    above = int(np.count_nonzero(samples > q))
    if above < 10 or q <= 0:
        raise CalibrationError(
            f"only {above} of {samples.size} samples exceed the {1 - alpha:.3f} quantile"
        )
    return alpha * q * math.exp(8.0 * q * q)


def calibrate(grid_size: int, reps: int, seed: int, alpha: float = 0.05,
              sampler: str = "markov", n_jobs: int = 1) -> NullCalibration:
    """Simulate the null maxima and fit the tail constant c_hat.

    Args:
        grid_size: number of grid points per path
        reps: number of simulated maxima
        seed: master seed, replication b uses substream (seed, b)
        alpha: level at which c_hat is fitted
        sampler: "markov" or "cholesky"
        n_jobs: joblib worker count

    Returns:
        NullCalibration with sorted samples, quantile table and c_hat
    """
    calibration = sample_max_gp(grid_size, reps, seed, sampler, n_jobs)
    c_hat = fit_c_hat(calibration, alpha)
    logger.info("fitted c_hat = %.4f at alpha = %g", c_hat, alpha)
    return replace(calibration, c_hat=c_hat, alpha_used=alpha)


def _tail_formula(x: float, c_hat: float) -> float:
    """(c/x) exp(-8 x^2) for the standardized statistic x > 0."""
    return min(1.0, c_hat / x * math.exp(-8.0 * x * x))


def survival_from_table(x: float, quantile_table: np.ndarray, c_hat: float) -> float:
    """
    1 - F_V(x) interpolated from the quantile table.

    Beyond the last tabulated quantile the tail formula takes over, capped at
    the table's upper tail mass.
    """
    probabilities = QUANTILE_PROBABILITIES
    if x >= quantile_table[-1]:
        return min(1.0 - probabilities[-1], _tail_formula(x, c_hat))
    if x < quantile_table[0]:
        return 1.0 - probabilities[0] * max(x, 0.0) / max(quantile_table[0], 1e-300)
    return 1.0 - float(np.interp(x, quantile_table, probabilities))


def pvalue_L2(S: float, omega_hat: float, calibration: Optional[NullCalibration] = None,
              mode: str = "tail_formula") -> float:
    """
    p-value of the max-L2 test.

    tail_formula: min(1, omega c / S exp(-8 S^2 / omega^2)); uses the
    reference constant when no calibration is given.
    empirical_cdf: 1 - ECDF(S / omega) with mid-rank ties.
    """
    if not omega_hat > 0:
        raise DomainError(f"omega_hat must be positive, got {omega_hat}")
    if mode not in ("tail_formula", "empirical_cdf"):
        raise CalibrationError(f"unknown p-value mode {mode!r}")
    if mode == "empirical_cdf" and calibration is None:
        raise CalibrationError("empirical_cdf mode needs a calibration")
    if S <= 0:
        return 1.0
    x = S / omega_hat

    if mode == "tail_formula":
        c_hat = REFERENCE_C_HAT
        if calibration is not None and calibration.c_hat is not None:
            c_hat = calibration.c_hat
        return _tail_formula(x, c_hat)

    c_hat = calibration.c_hat if calibration.c_hat is not None else REFERENCE_C_HAT
    if calibration.samples is None:
        if calibration.quantile_table is None:
            raise CalibrationError("calibration carries neither samples nor a quantile table")
        return survival_from_table(x, calibration.quantile_table, c_hat)
    samples = calibration.samples
    below = np.searchsorted(samples, x, side="left")
    at_or_below = np.searchsorted(samples, x, side="right")
    above = samples.size - at_or_below
    ties = at_or_below - below
    return float((above + 0.5 * ties) / samples.size)


def gumbel_normalizers(p: int, n: int, lambda_n: int) -> GumbelNormalizers:
    """
    Constants of the Gumbel limits: log(2p) for the untrimmed statistic and
    A, D evaluated at x = p log h_n, h_n = (n / lambda_n - 1)^2, for the
    trimmed one.
    """
    if p < 1 or n < 2:
        raise DomainError(f"need p >= 1 and n >= 2, got p={p}, n={n}")
    if lambda_n < 1:
        raise DomainError(f"lambda_n must be at least 1, got {lambda_n}")
    h_n = (n / lambda_n - 1.0) ** 2
    x = p * math.log(h_n) if h_n > 0 else -math.inf
    if not x > 1.0:
        raise NormalizerDomainError(p, n, lambda_n, x)
    log_x = math.log(x)
    A = math.sqrt(2.0 * log_x)
    D = 2.0 * log_x + 0.5 * math.log(log_x) - 0.5 * math.log(math.pi)
    return GumbelNormalizers(p, n, lambda_n, math.log(2.0 * p), h_n, x, A, D)


def load_or_build_calibration(path: Optional[str], config: RunConfig,
                              n_jobs: int = 1) -> NullCalibration:
    """
    Calibration from an artifact file, or simulated at reduced scale.

    Without a path the grid and replication count fall back to 2000 each and
    a warning is logged; the parameters are echoed in every result document.
    """
    if path is not None:
        from libs.artifacts import CalibrationArtifact

        return CalibrationArtifact.load(path).to_calibration()

    grid_size = min(config.grid_size, REDUCED_SCALE)
    reps = max(min(config.calib_reps, REDUCED_SCALE), MIN_REPS)
    logger.warning("no calibration file given; simulating at reduced scale T_d=%d, B=%d",
                   grid_size, reps)
    calibration = calibrate(grid_size, reps, config.seed, config.calibration_alpha,
                            n_jobs=n_jobs)
    return replace(calibration, source="auto-reduced")
