"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/domain problems exit 2,
numerical failures exit 3, I/O and parse problems exit 4.
"""


class DLDError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(DLDError, ValueError):
    exit_code = 2


class UsageError(DLDError):
    exit_code = 2


class ConfigurationError(UsageError):
    pass


class ResolutionError(DomainError):
    pass


class ConvergenceError(DLDError):
    exit_code = 3

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class TrainingDivergedError(DLDError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SolidQueryError(DLDError):
    exit_code = 3


class TrajectoryStallError(DLDError):
    exit_code = 3


class NoCrossingError(DLDError):
    exit_code = 3

    def __init__(self, message, low_mode=None, high_mode=None):
        super().__init__(message)
        self.low_mode = low_mode
        self.high_mode = high_mode


class ParseError(DLDError):
    exit_code = 4

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ParseError):
    pass


class VersionMismatchError(ParseError):
    pass


class VariantMismatchError(ParseError):
    pass
