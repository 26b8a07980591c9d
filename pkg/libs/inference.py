"""
Test Battery and Change-Point Location

Five procedures for H0: no mean change in an n x p panel.

- L2:              S = max_k {W(k) - mu_hat_k}, p-value from the simulated
                   limit of max V(t) scaled by omega_hat
- LinfUntrimmed:   M = max_k max_j |C_{0,j}(k)|, Gumbel p-value
                   1 - G(2 M^2 - log 2p)
- LinfTrimmed:     M_dagger = max over lambda_n <= k <= n - lambda_n of
                   max_j |C_{0.5,j}(k)|, Gumbel p-value 1 - G(A M - D)
- CauchyCC:        Cauchy combination of the L2 and LinfUntrimmed p-values
- CauchyCCTrimmed: Cauchy combination of the L2 and LinfTrimmed p-values

G(x) = exp(-exp(-x)). With normalization on, S, M and M_dagger are divided
by 1 + n^(-2/3) log p before their p-value transform.

Location: tau_hat takes the L2 argmax when p_S < p_M and the max-type argmax
otherwise; tau_hat_dagger does the same against p_M_dagger. All argmaxes
pick the smallest index on ties.

The battery is lazy: only the estimates the requested methods need are
computed, and a failing method is reported with its error while the others
still run.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import stats

from libs.cusum_core import PartialSums, W_profile, cusum_profile, partial_sums
from libs.data_model import (
    ChangePointEstimate,
    Method,
    RunConfig,
    TestReport,
    as_array,
    resolve_n_jobs,
)
from libs.dependence_estimators import DependenceEstimates, estimate_dependence, sigma_with_floor_flags
from libs.errors import ChangePointError, DomainError, TrimTooLarge
from libs.null_calibration import (
    NullCalibration,
    gumbel_normalizers,
    load_or_build_calibration,
    pvalue_L2,
)

logger = logging.getLogger(__name__)

PVALUE_CLAMP = 1e-15

NEEDS_L2 = {Method.L2, Method.CAUCHY_CC, Method.CAUCHY_CC_TRIMMED}
NEEDS_LINF = {Method.LINF_UNTRIMMED, Method.CAUCHY_CC}
NEEDS_LINF_TRIMMED = {Method.LINF_TRIMMED, Method.CAUCHY_CC_TRIMMED}


@dataclass(frozen=True)
class StatisticBundle:
    """The three base statistics with their argmax indices (None when not computed)."""

    S_np: Optional[float]
    M_np: Optional[float]
    M_dagger: Optional[float]
    normalized: bool
    k_S: Optional[int] = None
    k_M: Optional[int] = None
    k_M_dagger: Optional[int] = None
    divisor: float = 1.0


@dataclass
class BatteryResult:
    """Reports, break estimates and shared intermediates of one battery run."""

    reports: List[TestReport]
    estimate: Optional[ChangePointEstimate]
    estimate_dagger: Optional[ChangePointEstimate]
    bundle: StatisticBundle
    M: int
    lambda_n: int
    dependence: Optional[DependenceEstimates] = None
    calibration: Optional[NullCalibration] = None
    floored_components: Tuple[int, ...] = field(default_factory=tuple)

    def report(self, method: Method) -> Optional[TestReport]:
        for report in self.reports:
            if report.method == method:
                return report
        return None

    def p_values(self) -> Dict[Method, float]:
        return {r.method: r.p_value for r in self.reports if r.error is None}


def normalization_divisor(n: int, p: int) -> float:
    """1 + n^(-2/3) log p, the finite-sample correction applied when normalize is set."""
    return 1.0 + n ** (-2.0 / 3.0) * math.log(p)


def stat_L2(data, deps: DependenceEstimates, sums: PartialSums = None) -> Tuple[float, int]:
    """S = max_k {W(k) - mu_hat_k} and its smallest argmax k (1-based)."""
    values = W_profile(data, sums) - deps.mu_hat
    index = int(np.argmax(values))
    return float(values[index]), index + 1


def stat_Linf(data, sigma_hat, trimmed: bool, lambda_n: int = None,
              sums: PartialSums = None) -> Tuple[float, int]:
    """
    Max-type statistic and its smallest argmax k.

    Untrimmed: gamma = 0 over k = 1..n-1. Trimmed: gamma = 0.5 over
    k = lambda_n..n-lambda_n.
    """
    if sums is None:
        sums = partial_sums(data)
    n = sums.n
    if trimmed:
        if lambda_n is None or lambda_n < 1 or lambda_n > n - lambda_n:
            raise TrimTooLarge(n, lambda_n if lambda_n is not None else 0)
        profile = cusum_profile(data, 0.5, sigma_hat, sums)
        rows = np.abs(profile.values[lambda_n - 1:n - lambda_n]).max(axis=1)
        offset = lambda_n
    else:
        profile = cusum_profile(data, 0, sigma_hat, sums)
        rows = np.abs(profile.values).max(axis=1)
        offset = 1
    index = int(np.argmax(rows))
    return float(rows[index]), index + offset


def _gumbel_survival(x: float) -> float:
    """1 - exp(-exp(-x))."""
    if x < -700.0:
        return 1.0
    return float(-math.expm1(-math.exp(-x)))


def pvalue_Linf(statistic: float, p: int, n: int, lambda_n: int = None,
                trimmed: bool = False) -> float:
    """
    Gumbel p-value of a max-type statistic.

    A statistic of exactly zero carries no contrast at all and gets p-value 1,
    as the L2 test does for S <= 0.

    Raises:
        NormalizerDomainError: trimmed with p log h_n <= 1.
    """
    if trimmed:
        norm = gumbel_normalizers(p, n, lambda_n)
        x = norm.A * statistic - norm.D
    else:
        if p < 1:
            raise DomainError(f"p must be at least 1, got {p}")
        x = 2.0 * statistic * statistic - math.log(2.0 * p)
    if statistic == 0:
        return 1.0
    return min(1.0, max(0.0, _gumbel_survival(x)))


def cauchy_combine(p1: float, p2: float) -> Tuple[float, float]:
    """(T_cc, p_cc) for two p-values clamped into [1e-15, 1 - 1e-15]."""
    clamped = np.clip([p1, p2], PVALUE_CLAMP, 1.0 - PVALUE_CLAMP)
    T = float(np.mean(stats.cauchy.isf(clamped)))
    return T, float(stats.cauchy.sf(T))


def compute_statistics(data, deps: Optional[DependenceEstimates], sigma_hat=None,
                       lambda_n: int = None, normalize: bool = True) -> StatisticBundle:
    """
    S, M and M_dagger for one panel.

    S needs deps, M needs sigma_hat, M_dagger needs sigma_hat and lambda_n;
    a statistic whose inputs are missing stays None.
    """
    values = as_array(data)
    n, p = values.shape
    sums = partial_sums(values)
    divisor = normalization_divisor(n, p) if normalize else 1.0

    S = k_S = M = k_M = Md = k_Md = None
    if deps is not None:
        S, k_S = stat_L2(values, deps, sums)
        S /= divisor
    if sigma_hat is not None:
        M, k_M = stat_Linf(values, sigma_hat, False, sums=sums)
        M /= divisor
        if lambda_n is not None:
            Md, k_Md = stat_Linf(values, sigma_hat, True, lambda_n, sums)
            Md /= divisor
    return StatisticBundle(S, M, Md, normalize, k_S, k_M, k_Md, divisor)


def locate(data, deps: DependenceEstimates, p_values: Dict[Method, float], lambda_n: int,
           trimmed: bool = False, sigma_hat=None,
           bundle: StatisticBundle = None) -> ChangePointEstimate:
    """
    Adaptive change-point estimate.

    Returns the L2 argmax when p_S < p_M (strict), the max-type argmax
    otherwise. trimmed=True compares against the trimmed max-type test.
    """
    rival = Method.LINF_TRIMMED if trimmed else Method.LINF_UNTRIMMED
    if Method.L2 not in p_values or rival not in p_values:
        raise DomainError(f"locate needs p-values for {Method.L2.value} and {rival.value}")

    values = as_array(data)
    n = values.shape[0]
    if bundle is None:
        if sigma_hat is None:
            sigma_hat = deps.sigma_hat
        bundle = compute_statistics(values, deps, sigma_hat, lambda_n if trimmed else None,
                                    normalize=False)
    k_rival = bundle.k_M_dagger if trimmed else bundle.k_M
    candidates = {Method.L2: bundle.k_S, rival: k_rival}
    chosen = Method.L2 if p_values[Method.L2] < p_values[rival] else rival
    return ChangePointEstimate(candidates[chosen], chosen, candidates,
                               lambda_n=lambda_n if trimmed else None, n=n)


def _attempt(compute: Callable):
    """(value, None) on success, (None, error) on a ChangePointError."""
    try:
        return compute(), None
    except ChangePointError as exc:
        logger.info("%s: %s", type(exc).__name__, exc)
        return None, exc


def run_battery(data, config: RunConfig = None, calibration: Optional[NullCalibration] = None,
                methods: Iterable[Method] = tuple(Method), n_jobs: int = None) -> BatteryResult:
    """
    Evaluate the requested tests and both location estimates on one panel.

    Args:
        data: n x p panel (n >= 4).
        config (RunConfig): tuning and calibration settings.
        calibration: null calibration for the L2 p-value; in empirical_cdf
                     mode a reduced-scale one is simulated when absent.
        methods: subset of Method; only what they need is computed.

    Returns:
        BatteryResult with one TestReport per requested method, in Method
        order. A method whose inputs failed carries an error marker.
    """
    config = config or RunConfig()
    values = as_array(data)
    n, p = values.shape
    M, lambda_n = config.resolve(n, p)
    n_jobs = resolve_n_jobs(n_jobs if n_jobs is not None else config.n_jobs)
    requested = [m for m in Method if m in set(methods)]
    echo = dict(config.to_dict(), M=M, lambda_n=lambda_n)
    if p > n * n:
        logger.warning("p=%d exceeds n^2=%d; the max-type limits may be unreliable", p, n * n)

    need_l2 = any(m in NEEDS_L2 for m in requested)
    need_linf = any(m in NEEDS_LINF for m in requested)
    need_trim = any(m in NEEDS_LINF_TRIMMED for m in requested)
    sums = partial_sums(values)
    divisor = normalization_divisor(n, p) if config.normalize else 1.0

    deps, deps_error = None, None
    if need_l2:
        deps, deps_error = _attempt(lambda: estimate_dependence(
            values, M, with_sigma=False, with_scale=True, n_jobs=n_jobs))
        if deps is not None and calibration is None and config.pvalue_mode == "empirical_cdf":
            calibration = load_or_build_calibration(None, config, n_jobs)

    sigma, floored, sigma_error = None, (), None
    if need_linf or need_trim:
        found, sigma_error = _attempt(lambda: sigma_with_floor_flags(
            values, config.difference_coefficients, config.lag_step, config.kernel, config.bandwidth))
        if found is not None:
            sigma, floored = found

    outcome: Dict[Method, Tuple[Optional[float], Optional[float], Optional[int]]] = {}
    failures: Dict[Method, ChangePointError] = {}

    def l2():
        S, k = stat_L2(values, deps, sums)
        S /= divisor
        return S, pvalue_L2(S, deps.omega_hat, calibration, config.pvalue_mode), k

    def linf():
        stat, k = stat_Linf(values, sigma, False, sums=sums)
        stat /= divisor
        return stat, pvalue_Linf(stat, p, n), k

    def linf_trimmed():
        stat, k = stat_Linf(values, sigma, True, lambda_n, sums)
        stat /= divisor
        return stat, pvalue_Linf(stat, p, n, lambda_n, trimmed=True), k

    plan = ((Method.L2, need_l2, deps_error, l2),
            (Method.LINF_UNTRIMMED, need_linf, sigma_error, linf),
            (Method.LINF_TRIMMED, need_trim, sigma_error, linf_trimmed))
    for method, needed, upstream_error, compute in plan:
        if not needed:
            continue
        if upstream_error is not None:
            failures[method] = upstream_error
            continue
        found, error = _attempt(compute)
        if error is not None:
            failures[method] = error
        else:
            outcome[method] = found

    for combined, rival in ((Method.CAUCHY_CC, Method.LINF_UNTRIMMED),
                            (Method.CAUCHY_CC_TRIMMED, Method.LINF_TRIMMED)):
        if combined not in requested:
            continue
        missing = [m for m in (Method.L2, rival) if m not in outcome]
        if missing:
            failures[combined] = failures[missing[0]]
            continue
        outcome[combined] = (*cauchy_combine(outcome[Method.L2][1], outcome[rival][1]), None)

    reports = []
    for method in requested:
        if method in failures:
            reports.append(TestReport.failed(method, failures[method], echo))
        else:
            statistic, p_value, _ = outcome[method]
            reports.append(TestReport.from_pvalue(method, statistic, p_value, config.alpha, echo))

    def argmax_of(method):
        return outcome[method][2] if method in outcome else None

    def stat_of(method):
        return outcome[method][0] if method in outcome else None

    bundle = StatisticBundle(stat_of(Method.L2), stat_of(Method.LINF_UNTRIMMED),
                             stat_of(Method.LINF_TRIMMED), config.normalize,
                             argmax_of(Method.L2), argmax_of(Method.LINF_UNTRIMMED),
                             argmax_of(Method.LINF_TRIMMED), divisor)
    p_values = {m: outcome[m][1] for m in outcome}

    estimate = estimate_dagger = None
    if Method.L2 in outcome and Method.LINF_UNTRIMMED in outcome:
        estimate = locate(values, deps, p_values, lambda_n, trimmed=False, bundle=bundle)
    if Method.L2 in outcome and Method.LINF_TRIMMED in outcome:
        estimate_dagger = locate(values, deps, p_values, lambda_n, trimmed=True, bundle=bundle)

    if deps is not None and sigma is not None:
        deps = replace(deps, sigma_hat=sigma, floored_components=floored)
    return BatteryResult(reports, estimate, estimate_dagger, bundle, M, lambda_n,
                         deps, calibration, floored)
