"""Exception types shared across the package.

``DomainError`` and ``StructuralError`` subclass ``ValueError`` so callers
that only know stdlib exceptions still catch them; ``NumericalError`` marks
failures of the numerics (non-finite likelihood, degenerate sampler) rather
than of the inputs.
"""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class StructuralError(ValueError):
    """Shapes, labels or specifications are inconsistent with each other."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or otherwise unusable values."""
