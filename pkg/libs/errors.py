"""
Exception hierarchy for the change-point inference library.

Every failure that stems from the input data or from an invalid parameter
combination raises a subclass of ChangePointError, so callers (the command
line entry point, the test battery) can separate data problems from
programming errors with a single except clause.

Index bound violations on scan positions use the builtin IndexError.
"""


class ChangePointError(Exception):
    """Base class for all data and parameter errors raised by libs."""


class ParseError(ChangePointError):
    """Malformed CSV input. Carries 1-based row and column of the offending cell."""

    def __init__(self, message: str, row: int, column: int = None):
        self.row = row
        self.column = column
        where = f"row {row}" if column is None else f"row {row}, column {column}"
        super().__init__(f"{message} ({where})")


class TooFewObservations(ChangePointError):
    """The panel has fewer rows than the statistics need (n < minimum)."""

    def __init__(self, n: int, minimum: int = 4):
        self.n = n
        self.minimum = minimum
        super().__init__(f"need at least {minimum} observations, got n={n}")


class DegenerateVariance(ChangePointError):
    """A componentwise long-run standard deviation is not strictly positive."""

    def __init__(self, component: int, value: float):
        self.component = component
        self.value = value
        super().__init__(f"sigma_hat[{component}] = {value!r} is not positive")


class WindowTooShort(ChangePointError):
    """A lagged estimator has no summands: n is too small for the requested lag."""

    def __init__(self, what: str, lag: int, n: int):
        self.what = what
        self.lag = lag
        self.n = n
        super().__init__(f"{what}: summation window empty for lag {lag} at n={n}")


class DomainError(ChangePointError):
    """An argument lies outside the domain of a formula (e.g. p-values outside [0, 1])."""


class CalibrationError(ChangePointError):
    """A null calibration is missing, unreadable or inconsistent."""


class NormalizerDomainError(ChangePointError):
    """The Gumbel normalizers of the trimmed max-type test need p log h_n > 1."""

    def __init__(self, p: int, n: int, lambda_n: int, x: float):
        self.p = p
        self.n = n
        self.lambda_n = lambda_n
        self.x = x
        super().__init__(
            f"p*log(h_n) = {x:.6g} must exceed 1 (p={p}, n={n}, lambda_n={lambda_n})"
        )


class TrimTooLarge(ChangePointError):
    """lambda_n leaves no break candidate in [lambda_n, n - lambda_n]."""

    def __init__(self, n: int, lambda_n: int):
        self.n = n
        self.lambda_n = lambda_n
        super().__init__(f"trim window [{lambda_n}, {n - lambda_n}] is empty")


class DegenerateSeries(ChangePointError):
    """A series is constant, so its autocorrelations are undefined."""


class ConfigError(ChangePointError):
    """Invalid run, simulation or command line configuration."""
