"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class SarpnError(Exception):
    exit_code = 1
    kind = "error"


class ConfigurationError(SarpnError, ValueError):
    exit_code = 2
    kind = "config"


class DataError(SarpnError, ValueError):
    exit_code = 3
    kind = "data"


class FormatError(DataError):
    kind = "format"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(SarpnError, RuntimeError):
    exit_code = 4
    kind = "divergence"
