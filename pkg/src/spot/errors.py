"""Exception types shared across the package."""


class SpotError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SpotError, ValueError):
    pass


class OracleParseError(SpotError):
    """Oracle completion lacked a well-formed corrected block."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class TransportError(SpotError):
    """A remote endpoint could not be reached or returned garbage."""

    def __init__(self, message: str, task_id: str | None = None):
        super().__init__(message)
        self.task_id = task_id


class DatasetFormatError(SpotError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class IllegalMoveError(SpotError, ValueError):
    pass


class ResourceError(SpotError):
    pass


class NonFiniteError(SpotError, FloatingPointError):
    pass


class MissingCredentialError(SpotError):
    """A required API key environment variable is unset."""
