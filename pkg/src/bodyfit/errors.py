"""Exception hierarchy shared by all modules.

The CLI maps :class:`NumericalError` to exit code 1 and
:class:`SchemaError` / ``OSError`` to exit code 2.
"""


class BodyFitError(Exception):
    pass


class SchemaError(BodyFitError, ValueError):
    """A file or in-memory structure violates its declared format."""


class NumericalError(BodyFitError, ArithmeticError):
    pass


class DegenerateGeometryError(BodyFitError, ValueError):
    pass


class SliceTooSparse(DegenerateGeometryError):
    """Fewer than three non-collinear points in a slice."""


class NoMeasurableSlice(NumericalError):
    pass


class NonFiniteEnergy(NumericalError):
    def __init__(self, message, iteration=None, params=None):
        super().__init__(message)
        self.iteration = iteration
        self.params = params
