"""Exception types shared across the package."""


class UnitaryMeshError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimensionError(UnitaryMeshError, ValueError):
    pass


class InvariantViolationError(UnitaryMeshError, ValueError):
    """A value does not satisfy a structural invariant (e.g. unitarity)."""


class InvalidParameterError(UnitaryMeshError, ValueError):
    pass


class UnsupportedDimensionError(InvalidDimensionError):
    pass


class InvalidArgumentError(UnitaryMeshError, ValueError):
    pass


class NumericalFailure(UnitaryMeshError, ArithmeticError):
    """Objective or gradient became non-finite during optimization."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate
