"""Exception types shared across the package."""


class SwsbpError(Exception):
    """Base class for every error raised by this package."""


class ModelError(SwsbpError):
    """Model components have incompatible shapes or sizes."""


class ValidationError(SwsbpError, ValueError):
    """An input violates a numerical precondition beyond tolerance."""


class CountMismatchError(ValidationError):
    """Aggregate counts do not add up to the declared population size."""


class StructureError(SwsbpError):
    """The graph structure does not admit the requested operation."""


class DegeneracyError(SwsbpError):
    """A message or belief update produced an all-zero vector."""


class SupportViolationError(SwsbpError):
    """An observation puts probability mass where the model allows none."""


class SizeError(SwsbpError):
    """A brute-force computation would exceed its size guard."""
