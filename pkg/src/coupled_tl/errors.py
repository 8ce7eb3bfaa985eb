"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed, mis-shaped or non-finite input data."""


class DimensionError(DataError):
    """Operands whose shapes do not agree."""


class NumericalError(ArithmeticError):
    """A numerical routine could not produce a meaningful result."""


class SingularTransformError(NumericalError):
    """A transform is (numerically) singular, so log|det T| is undefined."""
