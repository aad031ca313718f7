"""Exception hierarchy shared across the package.

CLI exit-code mapping: IO failures (OSError and friends) -> 2,
ValidationError -> 3, NumericalError -> 4.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class OutOfDomainError(ValidationError):
    """Sample point lies outside the grid bounding box."""


class ExtractionError(ValidationError):
    """Height-field extraction failed for one or more nodes."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = list(nodes)


class NumericalError(RuntimeError):
    """Non-finite energy or other numerical breakdown."""


class StallError(NumericalError):
    """Line search step size underflowed."""
