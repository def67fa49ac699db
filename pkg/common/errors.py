"""
Exception hierarchy shared by every layer.

Three families map onto the command-line exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class IsoPsmError(Exception):
    """Base class for all errors raised by the toolkit."""

    exit_code = 1


class ConfigurationError(IsoPsmError, ValueError):
    exit_code = 2


class NotApplicable(ConfigurationError):
    """The requested quantity is not defined for this configuration."""


class DataError(IsoPsmError, ValueError):
    exit_code = 3


class EmptyInput(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class DegenerateArm(DataError):
    pass


class NonFinite(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class InsufficientControls(DataError):
    pass


class ParseError(DataError):
    """Malformed input file; `line` is the 1-based line number in the file."""

    def __init__(self, message: str, line: int = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class NumericalError(IsoPsmError, ArithmeticError):
    exit_code = 4


class NonConvergence(NumericalError):
    pass


class Separation(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NoDescent(NumericalError):
    pass


class NumericalOverflow(NumericalError):
    pass


class AllReplicatesFailed(NumericalError):
    pass


class ExcessiveReplicateFailures(NumericalError):
    pass
