"""Exception hierarchy shared by every ddxt module.

Each class carries the process exit code the CLI should use when the error
escapes a command: 1 for usage/config problems, 2 for bad input data, 3 for
internal numeric failures.
"""


class DDxTError(Exception):
    exit_code = 1


class ParameterError(DDxTError, ValueError):
    """An argument or config value is outside its allowed range."""


class ConfigError(DDxTError, ValueError):
    pass


class DimensionError(DDxTError, ValueError):
    exit_code = 3


class ContractError(DDxTError, ValueError):
    exit_code = 3


class DegenerateError(DDxTError, ValueError):
    """A row, batch or pooling window has no usable entries."""

    exit_code = 3


class DomainError(DDxTError, ValueError):
    exit_code = 3


class NumericError(DDxTError, ArithmeticError):
    exit_code = 3


class DataError(DDxTError, ValueError):
    exit_code = 2


class CorpusError(DataError):
    pass


class ValidationError(DataError):
    def __init__(self, message, field=None, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.field = field
        self.index = index


class ParseError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class CheckpointError(DataError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass
