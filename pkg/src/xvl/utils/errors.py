"""Exception hierarchy shared by services and commands."""


class XVLError(Exception):
    """Base error; `exit_code` is what the CLI exits with."""

    exit_code = 1


class DataError(XVLError, ValueError):
    """Invalid input data or violated precondition."""

    exit_code = 3


class ConfigError(DataError):
    """Invalid or unknown configuration."""


class CheckpointError(DataError):
    """Unreadable, truncated or incompatible checkpoint."""


class InapplicableError(DataError):
    """An error-simulator type does not apply to the given report."""


class NumericAbortError(XVLError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path
