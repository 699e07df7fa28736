"""Domain exceptions for gqarch.

Every error carries a ``details`` dict for structured logging and the exit
code the command-line interface maps it to.
"""
from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class GqarchError(Exception):
    """Base exception for all gqarch failures."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class ConfigError(GqarchError):
    """Raised for unknown, missing or malformed run configuration keys."""

    exit_code = EXIT_USAGE

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message, {"key": key})
        self.key = key


class InvalidParameterError(GqarchError, ValueError):
    """Raised when an argument violates a documented precondition."""

    exit_code = EXIT_USAGE


class ZetaDomainError(InvalidParameterError):
    """Raised when the zeta function is requested at or too close to its pole."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, s: float, eps_min: float):
        super().__init__(
            f"zeta_real requires s > 1 + {eps_min:g}, got s={s!r}",
        )
        self.details = {"s": s, "eps_min": eps_min}
        self.s = s


class InfeasibleBoxError(GqarchError):
    """Raised when the nonlinear c-interval of a parameter box is empty."""

    exit_code = EXIT_DATA

    def __init__(self, gamma: float, lower: float, upper: float):
        super().__init__(
            f"Empty B2 interval at gamma={gamma:g}: lower {lower:g} > upper {upper:g}",
            {"gamma": gamma, "lower": lower, "upper": upper},
        )
        self.gamma = gamma
        self.lower = lower
        self.upper = upper


class InfeasibleParameterError(GqarchError):
    """Raised when a parameter vector fails the L2 stationarity condition."""

    exit_code = EXIT_DATA

    def __init__(self, b2: float, gamma: float):
        super().__init__(
            f"L2 condition violated: B2={b2:.6g} >= 1 - gamma={1.0 - gamma:.6g}; pass force=True to simulate anyway",
            {"b2": b2, "gamma": gamma},
        )
        self.b2 = b2
        self.gamma = gamma


class SeriesParseError(GqarchError):
    """Raised when a series file row cannot be parsed."""

    exit_code = EXIT_DATA

    def __init__(self, path: str, line_no: int, text: str):
        super().__init__(
            f"{path}:{line_no}: cannot parse row {text!r}",
            {"path": path, "line_no": line_no, "text": text},
        )
        self.path = path
        self.line_no = line_no
        self.text = text


class EmptySeriesError(GqarchError):
    """Raised when a series file holds no observations."""

    exit_code = EXIT_DATA

    def __init__(self, path: str):
        super().__init__(f"{path}: series is empty", {"path": path})
        self.path = path


class NonPositiveVarianceError(GqarchError):
    """Raised when a conditional variance path reaches zero or below."""

    def __init__(self, index: int, value: float):
        super().__init__(
            f"Conditional variance {value!r} <= 0 at observation {index}",
            {"index": index, "value": value},
        )
        self.index = index
        self.value = value


class NoFeasibleStartError(GqarchError):
    """Raised when no multi-start point could be placed inside the box."""

    def __init__(self, starts: int, reason: str = ""):
        super().__init__(
            f"None of {starts} start points is feasible{': ' + reason if reason else ''}",
            {"starts": starts, "reason": reason},
        )
        self.starts = starts


class SingularInformationError(GqarchError):
    """Raised when the B matrix cannot be inverted reliably.

    The partially filled information matrices (without standard errors) are
    attached as ``info``.
    """

    def __init__(self, condition_number: float, info: Any = None):
        super().__init__(
            f"B matrix is singular or ill-conditioned (condition number {condition_number:.3g})",
            {"condition_number": condition_number},
        )
        self.condition_number = condition_number
        self.info = info


class NonPositiveAcfError(GqarchError):
    """Raised when a log-log memory fit meets a non-positive autocovariance."""

    def __init__(self, lag: int, value: float):
        super().__init__(
            f"Autocovariance at lag {lag} is non-positive ({value:.3g}); cannot take logs",
            {"lag": lag, "value": value},
        )
        self.lag = lag
        self.value = value
