"""Exception taxonomy shared across the package."""


class AdnsError(Exception):
    """Base class for all library errors."""


class ValidationError(AdnsError):
    """Inputs violate an operation's contract (shape, range, consistency)."""


class NumericalError(AdnsError):
    """An iterative routine failed to converge within its iteration cap."""


class MetricUndefinedError(ValidationError):
    """A metric was requested on a matrix that cannot support it."""


class ParseError(AdnsError):
    """A data file is malformed; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(AdnsError):
    """An experiment configuration is invalid; the message names the key."""


class InternalInvariantError(AdnsError):
    """A state invariant the library itself guarantees was violated."""
