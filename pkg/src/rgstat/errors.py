"""Exception hierarchy shared by the library and the CLI."""


class RgstatError(Exception):
    """Base class for all errors raised by rgstat."""


class BudgetExceededError(RgstatError):
    """A ball, region or canonicalization input grew past its vertex budget."""

    def __init__(self, message: str, *, radius: int | None = None, size: int | None = None):
        super().__init__(message)
        self.radius = radius
        self.size = size


class InvalidPatchError(RgstatError, ValueError):
    pass


class OracleError(RgstatError, KeyError):
    """The oracle was asked about a vertex it never produced."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NotATreeError(RgstatError):
    pass


class IncompatibleMeasuresError(RgstatError, ValueError):
    pass


class InvariantViolation(RgstatError):
    """An internal consistency check failed (e.g. a vertex id collision)."""


class ConfigError(RgstatError, ValueError):
    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = ""
        if field:
            where += field
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}" if where else message)
