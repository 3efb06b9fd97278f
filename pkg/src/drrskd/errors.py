"""Exception hierarchy shared by every module.

Each category carries the process exit code the CLI uses for it.
"""


class DrrError(Exception):
    exit_code = 1


class ShapeError(DrrError, ValueError):
    exit_code = 3


class DomainError(DrrError, ValueError):
    exit_code = 4


class NumericError(DrrError, ArithmeticError):
    exit_code = 4


class ConfigError(DrrError, ValueError):
    exit_code = 2


class DataError(DrrError, ValueError):
    exit_code = 5


class FormatError(DataError):
    """Malformed binary input. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(DrrError, RuntimeError):
    exit_code = 6


class FrozenModelError(StateError):
    pass


class ReportError(DrrError):
    exit_code = 5
