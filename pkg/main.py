"""
High-Dimensional Mean Change-Point Tests - Command Line Entry Point

This module is the command line front end of the change-point toolkit. It
binds CSV ingestion, null calibration, the five-test battery, change-point
location, Monte Carlo experiments and Ljung-Box screening into reproducible
runs that each write a machine-readable result plus a human summary.

Subcommands:
    calibrate   Simulate max V(t), fit the tail constant c_hat, write the
                calibration artifact (JSON)
    test        Run the L2, max-type and Cauchy-combination tests on a CSV
                panel (JSON)
    locate      Test, then estimate the change point with both adaptive
                estimators (JSON)
    simulate    Empirical size, power or location accuracy on synthetic
                panels (CSV)
    screen      Ljung-Box test per series with a p-value histogram (JSON)

Command Line Interface:
    python main.py calibrate --grid 10000 --reps 10000 --output calibration.json
    python main.py test --input panel.csv --calibration calibration.json
    python main.py locate --input panel.csv
    python main.py simulate --scenario S2 --n 400 --p 250 --m0 2 --error t4 --reps 200
    python main.py screen --input prices.csv --log-returns

Output Files:
    When --output is not given, results are written next to the input with
    the subcommand as a second extension (panel.test.json, panel.locate.json,
    panel.screen.json); calibrate writes calibration.json and simulate writes
    simulation.csv in the working directory.

Exit Codes:
    0  success
    1  usage error (invalid flags or flag values)
    2  data error (malformed input, missing calibration file, unwritable output)
    3  internal error
    4  `simulate --assert-ordering` found the power ordering violated

Environment:
    HDCP_N_JOBS   default worker count when --n-jobs is not given
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

from libs.artifacts import (
    CalibrationArtifact,
    calibration_echo,
    document_header,
    write_result_json,
)
from libs.data_model import METHOD_FLAGS, Method, RunConfig, load_csv, log_returns, resolve_n_jobs
from libs.diagnostics import screen_panel
from libs.errors import ChangePointError, ConfigError
from libs.inference import NEEDS_L2, BatteryResult, run_battery
from libs.null_calibration import MIN_REPS, REFERENCE_C_HAT, calibrate, load_or_build_calibration
from libs.simulation import (
    DgpSpec,
    check_power_ordering,
    power_curve,
    run_experiment,
    write_experiment_csv,
)

logger = logging.getLogger("hdcp")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3
EXIT_ORDERING = 4

RULE = "=" * 80


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    parser.add_argument("--n-jobs", type=int, default=None,
                        help="worker count (default: $HDCP_N_JOBS or 1)")


def _add_input(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="CSV panel, rows are time points")
    parser.add_argument("--has-header", action="store_true", help="first CSV row holds column names")
    parser.add_argument("--log-returns", action="store_true",
                        help="convert prices to log returns before analysis")
    parser.add_argument("--output", default=None, help="result file")


def _add_battery(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--m", type=_positive_int, default=None, help="lag truncation M")
    parser.add_argument("--lambda", dest="lambda_trim", type=_positive_int, default=None,
                        help="trimming parameter lambda_n")
    parser.add_argument("--no-normalize", action="store_true",
                        help="skip the 1 + n^(-2/3) log p divisor")
    parser.add_argument("--calibration", default=None, help="calibration artifact from `calibrate`")
    parser.add_argument("--pvalue-mode", choices=("tail_formula", "empirical_cdf"),
                        default="tail_formula")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--kernel", choices=("bartlett", "quadratic_spectral"), default="bartlett")
    parser.add_argument("--bandwidth", type=_positive_int, default=None)
    parser.add_argument("--lag-step", type=_positive_int, default=None)


def build_parser() -> CliParser:
    """Parser with the calibrate, test, locate, simulate and screen subcommands."""
    parser = CliParser(prog="main.py",
                       description="Mean change-point tests for high-dimensional time series.")
    commands = parser.add_subparsers(dest="command", required=True)

    cal = commands.add_parser("calibrate", help="simulate the L2 null limit and fit c_hat")
    cal.add_argument("--grid", type=int, default=10000, help="grid size T_d")
    cal.add_argument("--reps", type=int, default=10000, help="replications B")
    cal.add_argument("--alpha", type=float, default=0.05, help="level of the c_hat fit")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--sampler", choices=("markov", "cholesky"), default="markov")
    cal.add_argument("--embed-samples", action="store_true", help="store all B maxima")
    cal.add_argument("--output", default="calibration.json")
    _add_common(cal)

    for name, text in (("test", "run the test battery"), ("locate", "test and locate the change point")):
        sub = commands.add_parser(name, help=text)
        _add_input(sub)
        _add_battery(sub)
        if name == "test":
            sub.add_argument("--method", choices=tuple(METHOD_FLAGS), default="all")
        _add_common(sub)

    sim = commands.add_parser("simulate", help="Monte Carlo size, power or location experiment")
    sim.add_argument("--scenario", choices=("S1", "S2"), default="S1")
    sim.add_argument("--n", type=_positive_int, default=400)
    sim.add_argument("--p", type=_positive_int, default=250)
    sim.add_argument("--m0", type=int, default=0)
    sim.add_argument("--error", choices=("normal", "t4"), default="normal")
    sim.add_argument("--tau-frac", type=float, default=1.0)
    sim.add_argument("--sparsity", type=_positive_int, default=1)
    sim.add_argument("--c-tau", type=float, default=15.0)
    sim.add_argument("--c-tau-grid", type=_float_list, default=None,
                     help="comma separated signal strengths for a power curve")
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--mode", choices=("size", "power", "locate"), default=None,
                     help="default: size when --tau-frac is 1, power otherwise")
    sim.add_argument("--assert-ordering", action="store_true",
                     help="run sparse and dense power and check their ordering")
    sim.add_argument("--dense-sparsity", type=_positive_int, default=None,
                     help="dense sparsity for --assert-ordering (default p/5)")
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--calibration", default=None)
    sim.add_argument("--pvalue-mode", choices=("tail_formula", "empirical_cdf"),
                     default="tail_formula")
    sim.add_argument("--output", default="simulation.csv")
    _add_common(sim)

    scr = commands.add_parser("screen", help="Ljung-Box screening per series")
    _add_input(scr)
    scr.add_argument("--lags", type=_positive_int, default=None, help="default min(10, n/5)")
    scr.add_argument("--alpha", type=float, default=0.05)
    scr.add_argument("--bins", type=_positive_int, default=10)
    _add_common(scr)
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def default_output(input_path: str, command: str) -> str:
    stem, _ = os.path.splitext(input_path)
    return f"{stem}.{command}.json"


def run_config(args: argparse.Namespace, parser: CliParser) -> RunConfig:
    """RunConfig from the battery flags; invalid values become usage errors."""
    try:
        return RunConfig(
            alpha=args.alpha,
            m_lag=getattr(args, "m", None),
            lambda_trim=getattr(args, "lambda_trim", None),
            normalize=not getattr(args, "no_normalize", False),
            seed=args.seed,
            pvalue_mode=args.pvalue_mode,
            kernel=getattr(args, "kernel", "bartlett"),
            bandwidth=getattr(args, "bandwidth", None),
            lag_step=getattr(args, "lag_step", None),
            n_jobs=args.n_jobs,
        )
    except ConfigError as exc:
        parser.error(str(exc))


def load_panel(args: argparse.Namespace):
    """Read --input, converting prices to log returns when asked."""
    panel = load_csv(args.input, has_header=args.has_header)
    if args.log_returns:
        panel = log_returns(panel)
    return panel


def print_banner(title: str) -> None:
    print(RULE)
    print(title)
    print(RULE)


def cmd_calibrate(args: argparse.Namespace, parser: CliParser) -> int:
    """Simulate the null maxima, fit c_hat and write the calibration artifact."""
    if args.reps < MIN_REPS:
        parser.error(f"--reps must be at least {MIN_REPS}")
    if args.grid < 2:
        parser.error("--grid must be at least 2")
    if not 0.0 < args.alpha < 0.5:
        parser.error("--alpha must lie in (0, 0.5)")
    if args.seed < 0:
        parser.error("--seed must be non-negative")
    n_jobs = resolve_n_jobs(args.n_jobs)
    calibration = calibrate(args.grid, args.reps, args.seed, args.alpha, args.sampler, n_jobs)
    CalibrationArtifact.create(calibration, embed_samples=args.embed_samples).save(args.output)

    print_banner("NULL CALIBRATION")
    print(f"  grid size T_d : {calibration.grid_size}")
    print(f"  replications  : {calibration.reps}")
    print(f"  seed          : {calibration.seed}")
    print(f"  sampler       : {calibration.sampler}")
    print(f"  alpha         : {calibration.alpha_used}")
    print(f"  c_hat         : {calibration.c_hat:.4f}")
    print(f"  written to    : {args.output}")
    print(RULE)
    return EXIT_OK


def _battery_document(command: str, args, panel, config: RunConfig,
                      result: BatteryResult) -> Dict:
    document = document_header(command)
    document["input"] = {"path": args.input, "n": panel.n, "p": panel.p}
    document["config"] = dict(config.to_dict(), M=result.M, lambda_n=result.lambda_n)
    document["calibration"] = calibration_echo(result.calibration, REFERENCE_C_HAT)
    deps = result.dependence
    document["dependence"] = {
        "M": result.M,
        "omega_hat": None if deps is None else deps.omega_hat,
        "degenerate_scale": False if deps is None else deps.degenerate_scale,
        "trace_gamma": None if deps is None else deps.trace_gamma,
        "degenerate_variance_components": list(result.floored_components),
    }
    document["results"] = [report.to_dict() for report in result.reports]
    return document


def _print_reports(result: BatteryResult) -> None:
    print(f"  {'method':<18s} {'statistic':>14s} {'p-value':>12s}  reject")
    print("  " + "-" * 56)
    for report in result.reports:
        if report.error is not None:
            print(f"  {report.method.value:<18s} error: {report.error}")
            continue
        print(f"  {report.method.value:<18s} {report.statistic:>14.6g} {report.p_value:>12.4g}  "
              f"{'yes' if report.reject else 'no'}")


def _run_battery_command(args, parser: CliParser, command: str,
                         methods) -> int:
    config = run_config(args, parser)
    panel = load_panel(args)
    n_jobs = resolve_n_jobs(args.n_jobs)

    calibration = None
    if any(m in NEEDS_L2 for m in methods):
        calibration = load_or_build_calibration(args.calibration, config, n_jobs)

    result = run_battery(panel, config, calibration, methods, n_jobs)
    document = _battery_document(command, args, panel, config, result)
    if command == "locate":
        document["estimates"] = {
            "tau_hat": None if result.estimate is None else result.estimate.to_dict(),
            "tau_hat_dagger": None if result.estimate_dagger is None else result.estimate_dagger.to_dict(),
        }
    output = args.output or default_output(args.input, command)
    write_result_json(document, output)

    print_banner("CHANGE-POINT TEST" if command == "test" else "CHANGE-POINT LOCATION")
    print(f"  input         : {args.input}  (n={panel.n}, p={panel.p})")
    print(f"  M / lambda_n  : {result.M} / {result.lambda_n}")
    print(f"  normalized    : {'yes' if config.normalize else 'no'}")
    print(f"  calibration   : {document['calibration']['source']}")
    print()
    _print_reports(result)
    if command == "locate":
        print()
        for label, estimate in (("tau_hat", result.estimate), ("tau_hat_dagger", result.estimate_dagger)):
            if estimate is None:
                print(f"  {label:<15s}: unavailable")
            else:
                print(f"  {label:<15s}: {estimate.tau_hat}  (chosen by {estimate.chosen_by.value})")
    print()
    print(f"  written to    : {output}")
    print(RULE)
    return EXIT_OK


def cmd_test(args, parser: CliParser) -> int:
    """Run the selected tests and write the test document."""
    return _run_battery_command(args, parser, "test", METHOD_FLAGS[args.method])


def cmd_locate(args, parser: CliParser) -> int:
    """Run every test, estimate the break and write the locate document."""
    return _run_battery_command(args, parser, "locate", tuple(Method))


def cmd_simulate(args, parser: CliParser) -> int:
    """Monte Carlo size, power or location experiment written as CSV."""
    if args.reps < 50:
        parser.error("--reps must be at least 50")
    mode = args.mode or ("size" if args.tau_frac >= 1.0 else "power")
    if mode == "size" and args.tau_frac < 1.0:
        parser.error("size mode needs --tau-frac 1")
    if mode != "size" and args.tau_frac >= 1.0:
        parser.error(f"{mode} mode needs --tau-frac below 1")
    if args.assert_ordering and mode != "power":
        parser.error("--assert-ordering needs power mode")

    config = run_config(args, parser)
    try:
        spec = DgpSpec(n=args.n, p=args.p, M0=args.m0, scenario=args.scenario,
                       error_dist=args.error, tau_frac=args.tau_frac, sparsity=args.sparsity,
                       c_tau=args.c_tau, seed=args.seed)
    except ConfigError as exc:
        parser.error(str(exc))
    n_jobs = resolve_n_jobs(args.n_jobs)
    calibration = load_or_build_calibration(args.calibration, config, n_jobs)

    ordering = None
    if args.c_tau_grid:
        rows = power_curve(spec, args.c_tau_grid, args.reps, config, calibration, n_jobs)
    elif args.assert_ordering:
        dense_s = args.dense_sparsity or max(1, args.p // 5)
        if dense_s > args.p:
            parser.error("--dense-sparsity exceeds --p")
        sparse_rows = run_experiment(spec, args.reps, config, "power", calibration, n_jobs)
        dense_rows = run_experiment(replace(spec, sparsity=dense_s), args.reps, config, "power",
                                    calibration, n_jobs)
        rows = sparse_rows + dense_rows
        ordering = check_power_ordering(sparse_rows, dense_rows)
    else:
        rows = run_experiment(spec, args.reps, config, mode, calibration, n_jobs)
    write_experiment_csv(rows, args.output, with_c_tau=bool(args.c_tau_grid))

    print_banner(f"SIMULATION - {mode.upper()}")
    print(f"  scenario      : {spec.scenario}  n={spec.n} p={spec.p} M0={spec.M0} error={spec.error_dist}")
    print(f"  replications  : {args.reps}  seed={spec.seed}")
    print()
    for row in rows:
        label = f"s={row.s}" + (f" c_tau={row.c_tau:g}" if args.c_tau_grid else "")
        print(f"  {row.method:<18s} {label:<20s} {row.metric:<15s} {row.value:.4f}")
    if ordering is not None:
        print()
        print(f"  power ordering: {'holds' if ordering.passed else 'VIOLATED'}")
        for failure in ordering.failures:
            print(f"    - {failure}")
    print()
    print(f"  written to    : {args.output}")
    print(RULE)
    if ordering is not None and not ordering.passed:
        return EXIT_ORDERING
    return EXIT_OK


def cmd_screen(args, parser: CliParser) -> int:
    """Ljung-Box screening of every series of the panel."""
    if not 0.0 < args.alpha < 1.0:
        parser.error("--alpha must lie in (0, 1)")
    panel = load_panel(args)
    report = screen_panel(panel, args.lags, args.alpha, args.bins, resolve_n_jobs(args.n_jobs))

    document = document_header("screen")
    document.update({
        "lags": report.lags,
        "alpha": report.alpha,
        "series": [result.to_dict() for result in report.series],
        "skipped_constant_series": report.skipped,
        "rejection_fraction": report.rejection_fraction,
        "histogram": {"bins": report.bins, "counts": report.counts},
    })
    output = args.output or default_output(args.input, "screen")
    write_result_json(document, output)

    print_banner("LJUNG-BOX SCREENING")
    print(f"  input         : {args.input}  (n={panel.n}, p={panel.p})")
    print(f"  lags          : {report.lags}")
    print(f"  rejected      : {report.rejection_fraction:.1%} at alpha={report.alpha}")
    print(f"  histogram     : {' '.join(str(c) for c in report.counts)}")
    print(f"  written to    : {output}")
    print(RULE)
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "test": cmd_test,
    "locate": cmd_locate,
    "simulate": cmd_simulate,
    "screen": cmd_screen,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command line entry point.

    Returns:
        0 on success, 1 for usage errors (raised by argparse as SystemExit),
        2 for data and I/O errors, 3 for internal errors and 4 when a
        simulate --assert-ordering comparison fails.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args, parser)
    except ChangePointError as exc:
        print(f"Error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        logger.debug("internal error", exc_info=True)
        print(f"Internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
