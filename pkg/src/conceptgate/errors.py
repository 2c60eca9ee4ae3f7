"""Exception types shared across the engine.

Everything raised on purpose by this package derives from EngineError so
callers (and the CLI) can catch one base class.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EngineError):
    """Operand shapes disagree."""


class FormatError(EngineError):
    """A file does not match its declared binary or JSON layout."""


class CorruptDataError(EngineError):
    """A file parsed cleanly but its contents violate a data invariant."""


class DegenerateInputError(EngineError):
    """An input is numerically unusable, e.g. a zero vector."""


class ArityError(EngineError):
    """Ragged per-concept attribute lists where a fixed arity is required."""


class CoverageError(EngineError):
    """A high-level concept was given no attributes."""


class ParameterError(EngineError):
    """A scalar configuration value is outside its legal range."""


class ValidationError(EngineError):
    """Cross-object consistency check failed."""


class DomainError(EngineError):
    """Array entries are outside the expected value domain."""


class DivergenceError(EngineError):
    """Training produced a non-finite loss."""
