#!/usr/bin/env python3
"""
Tests for the observation panel, CSV ingestion, tuning rules and result records.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to Python path to access libs
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from libs.data_model import (
    ChangePointEstimate,
    Method,
    RunConfig,
    TestReport,
    TimeSeriesMatrix,
    ceil_eighth_root,
    default_lambda,
    default_m_lag,
    load_csv,
    log_returns,
    resolve_n_jobs,
    substream_rng,
    write_csv,
)
from libs.errors import ConfigError, ParseError, TooFewObservations


def _write(tmp_path, name, text, encoding="utf-8"):
    path = tmp_path / name
    path.write_bytes(text.encode(encoding))
    return str(path)


def test_three_rows_are_too_few(tmp_path):
    path = _write(tmp_path, "short.csv", "1,2\n3,4\n5,6\n")
    with pytest.raises(TooFewObservations) as info:
        load_csv(path)
    assert info.value.n == 3


def test_four_by_two_panel_loads(tmp_path):
    path = _write(tmp_path, "panel.csv", "1,2\n3,4\n5,6\n7.5,-8e-1\n")
    panel = load_csv(path)
    assert (panel.n, panel.p) == (4, 2)
    assert panel.values[3, 1] == -0.8


def test_nan_cell_reports_its_coordinates(tmp_path):
    path = _write(tmp_path, "nan.csv", "1,2\n3,NaN\n5,6\n7,8\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert (info.value.row, info.value.column) == (2, 2)


def test_non_numeric_cell(tmp_path):
    path = _write(tmp_path, "text.csv", "a,b\n1,2\n3,x\n5,6\n7,8\n")
    with pytest.raises(ParseError) as info:
        load_csv(path, has_header=True)
    assert (info.value.row, info.value.column) == (3, 2)


def test_ragged_row_reports_row(tmp_path):
    path = _write(tmp_path, "ragged.csv", "1,2\n3,4\n5\n7,8\n9,10\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.row == 3
    assert info.value.column is None


def test_header_bom_and_blank_lines(tmp_path):
    path = _write(tmp_path, "bom.csv", "\ufeffx,y\n1,2\n\n3,4\n5,6\n7,8\n")
    panel = load_csv(path, has_header=True)
    assert panel.column_names == ("x", "y")
    assert panel.n == 4


def test_non_utf8_file_is_a_parse_error(tmp_path):
    path = _write(tmp_path, "latin.csv", "x,y\n1,\u00e9\n3,4\n5,6\n7,8\n", encoding="latin-1")
    with pytest.raises(ParseError) as info:
        load_csv(path, has_header=True)
    assert info.value.row == 1


def test_write_then_load_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    values = rng.standard_normal((6, 3)) * 1e3
    path = str(tmp_path / "round.csv")
    write_csv(TimeSeriesMatrix(values), path)
    assert np.array_equal(load_csv(path).values, values)


def test_panel_is_read_only_and_reshapes_vectors():
    panel = TimeSeriesMatrix([1.0, 2.0, 3.0, 4.0])
    assert (panel.n, panel.p) == (4, 1)
    with pytest.raises(ValueError):
        panel.values[0, 0] = 9.0


def test_panel_rejects_infinite_entries():
    values = np.zeros((5, 2))
    values[4, 0] = np.inf
    with pytest.raises(ParseError) as info:
        TimeSeriesMatrix(values)
    assert (info.value.row, info.value.column) == (5, 1)


def test_eighth_root_is_exact_at_perfect_powers():
    assert ceil_eighth_root(1) == 1
    assert ceil_eighth_root(2) == 2
    assert ceil_eighth_root(256) == 2
    assert ceil_eighth_root(257) == 3
    assert ceil_eighth_root(6561) == 3
    assert ceil_eighth_root(6562) == 4


def test_default_m_lag_matches_integer_oracle():
    for m in range(4, 10001, 7):
        k = 1
        while k ** 8 < m:
            k += 1
        assert default_m_lag(m, 10 ** 6) == k
        assert default_m_lag(10 ** 6, m) == k


def test_default_lambda():
    assert default_lambda(400) == 20
    assert default_lambda(401) == 21
    assert default_lambda(4) == 2
    # ceil(sqrt(5)) = 3 is clamped to floor(5/2)
    assert default_lambda(5) == 2


def test_run_config_resolve_and_overrides():
    assert RunConfig().resolve(400, 250) == (2, 20)
    assert RunConfig().resolve(400, 300) == (3, 20)
    assert RunConfig(m_lag=2, lambda_trim=7).resolve(400, 250) == (2, 7)


@pytest.mark.parametrize("kwargs", [
    {"alpha": 1.5},
    {"m_lag": 0},
    {"lambda_trim": 0},
    {"pvalue_mode": "exact"},
    {"kernel": "parzen"},
    {"seed": -1},
])
def test_run_config_validation(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_run_config_echo_is_plain():
    echo = RunConfig().to_dict()
    assert echo["alpha"] == 0.05
    assert echo["difference_coefficients"] == [0.1942, 0.2809, 0.3832, -0.8582]


def test_report_clamps_and_rejects():
    report = TestReport.from_pvalue(Method.L2, 3.0, 1.7, 0.05, {})
    assert report.p_value == 1.0 and report.reject is False
    report = TestReport.from_pvalue(Method.L2, 3.0, float("nan"), 0.05, {})
    assert report.p_value == 1.0
    report = TestReport.from_pvalue(Method.L2, 3.0, 0.01, 0.05, {})
    assert report.reject is True
    # reject is strict
    assert TestReport.from_pvalue(Method.L2, 3.0, 0.05, 0.05, {}).reject is False


def test_failed_report_carries_error_marker():
    report = TestReport.failed(Method.LINF_TRIMMED, TooFewObservations(3), {})
    assert report.to_dict() == {"method": "LinfTrimmed",
                                "error": "TooFewObservations: need at least 4 observations, got n=3"}


def test_estimate_invariants():
    ChangePointEstimate(10, Method.L2, {Method.L2: 10, Method.LINF_UNTRIMMED: 12})
    with pytest.raises(ValueError):
        ChangePointEstimate(12, Method.L2, {Method.L2: 10, Method.LINF_UNTRIMMED: 12})
    with pytest.raises(ValueError):
        ChangePointEstimate(3, Method.LINF_TRIMMED, {Method.L2: 10, Method.LINF_TRIMMED: 3},
                            lambda_n=5, n=40)


def test_log_returns():
    prices = TimeSeriesMatrix(np.exp(np.array([[0.0], [0.1], [0.3], [0.2], [0.5]])))
    returns = log_returns(prices)
    assert returns.n == 4
    assert np.allclose(returns.values[:, 0], [0.1, 0.2, -0.1, 0.3])
    with pytest.raises(ParseError):
        log_returns(TimeSeriesMatrix(np.array([[1.0], [2.0], [0.0], [3.0], [4.0]])))


def test_n_jobs_resolution(monkeypatch):
    monkeypatch.delenv("HDCP_N_JOBS", raising=False)
    assert resolve_n_jobs() == 1
    monkeypatch.setenv("HDCP_N_JOBS", "3")
    assert resolve_n_jobs() == 3
    assert resolve_n_jobs(2) == 2


def test_substreams_are_reproducible_and_distinct():
    a = substream_rng(7, 1).standard_normal(5)
    assert np.array_equal(a, substream_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, substream_rng(7, 2).standard_normal(5))
    assert math.isfinite(a.sum())


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
