"""Exception taxonomy shared across the toolkit."""


class RepscopeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RepscopeError):
    """A file could not be parsed under its declared format."""

    def __init__(self, message: str, *, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f" [{path}"
            where += f":{line}]" if line is not None else "]"
        super().__init__(message + where)


class ValidationError(RepscopeError):
    """Input violates a documented invariant or precondition."""


class InsufficientDataError(ValidationError):
    """Too few observations for the requested operation."""


class DegenerateDataError(ValidationError):
    """Data has no usable variation (e.g. constant loadings)."""


class NumericalError(RepscopeError):
    """A numerical routine failed beyond recoverable jitter/fallbacks."""
