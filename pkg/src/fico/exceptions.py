class FicoError(Exception):
    """Base class for errors raised by fico."""


class ValidationError(FicoError, ValueError):
    """Input violates a documented invariant or precondition."""


class FormatError(ValidationError):
    """A file does not match its declared on-disk layout."""


class NondeterminismError(FicoError, RuntimeError):
    """Repeated runs of the same computation produced different results."""
