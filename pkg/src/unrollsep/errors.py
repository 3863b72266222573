"""Exception types shared across the package.

The CLI maps these onto stable exit codes: configuration problems are
exit 2, numerical failures exit 3, I/O problems exit 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the declared problem sizes."""


class DegenerateSignalError(ValueError):
    """A statistic is undefined for the given signal (e.g. zero variance)."""


class NumericalFailureError(ArithmeticError):
    """A recursion produced non-finite values.

    ``step`` identifies the failing time index when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class NearSingularGainError(NumericalFailureError):
    """The gain denominator of an unrolled layer is within 1e-12 of zero."""


class SingularStatisticsError(ArithmeticError):
    """Accumulated correlation statistics are (near-)singular."""


class RankDeficientError(ArithmeticError):
    """A mixing matrix without full column rank was passed where one is required."""


class UnsupportedLossError(ConfigError):
    """The requested loss is not defined for the given network."""


class TapeError(RuntimeError):
    """Base class for differentiation-tape misuse."""


class CrossTapeError(TapeError):
    """Operands recorded on different tapes were mixed in one operation."""


class TapeLimitError(TapeError):
    """The tape exceeded its configured node limit."""
