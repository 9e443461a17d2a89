import json
from enum import Enum


class ErrorCode(Enum):
    """Stable identifiers of certificate findings."""

    THM1_RATIO = "HYP001"
    THM2_NORM_MARGIN = "HYP002"
    THM2_D_RATIO = "HYP003"

    EDGE_OUTSIDE_INTERVAL = "EDGE001"
    EDGE_UNVERIFIED = "EDGE002"

    KEST_VALUE_MARGIN = "KEST001"
    KEST_DERIVATIVE_MARGIN = "KEST002"

    CONVOLUTION_ATOM = "ATOM001"


class ErrorEnumEncoder(json.JSONEncoder):
    """Custom JSON encoder that handles Enum serialization."""

    def default(self, obj):
        if isinstance(obj, Enum):
            return obj.value
        return super().default(obj)


class FreeEdgeError(Exception):
    """Base class of all errors raised by free-edge; carries the CLI exit code."""

    exit_code = 1


class MeasureError(FreeEdgeError, ValueError):
    """Invalid measure or row data."""

    exit_code = 2


class SeriesOrderError(FreeEdgeError, ValueError):
    """A truncation order outside the supported range."""

    exit_code = 2


class ParseError(FreeEdgeError):
    """Row file syntax or content error with its position."""

    exit_code = 2

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class NumericError(FreeEdgeError):
    """A numerical procedure failed to produce a trustworthy result."""

    exit_code = 3


class PoleError(NumericError):
    """A transform was evaluated at a pole."""


class BracketError(NumericError):
    """A root bracket did not have the required sign change."""


class ConvergenceError(NumericError):
    """An iteration ran out of steps before meeting its tolerance."""


class QuadratureError(NumericError):
    """Contour quadrature did not settle before the node cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class EigenSolverError(NumericError):
    """The Jacobi eigen-solver hit its sweep limit."""


class CertificateError(NumericError):
    """A certificate could not be issued (failed override condition or estimate violation)."""


class UsageError(FreeEdgeError, ValueError):
    """Invalid command arguments, such as an unknown check name."""

    exit_code = 2
