"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class DLSVMError(Exception):
    exit_code = 1


class DimensionError(DLSVMError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 3


class InputError(DLSVMError, ValueError):
    """Bad or unusable input data."""

    exit_code = 3


class ConfigError(DLSVMError, ValueError):
    """Invalid hyperparameter or configuration value."""

    exit_code = 4


class FormatError(DLSVMError):
    """A container or checkpoint file is malformed."""

    exit_code = 5

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(DLSVMError, ArithmeticError):
    """Training produced a non-finite value."""

    exit_code = 6
