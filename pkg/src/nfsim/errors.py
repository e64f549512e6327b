"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration (dimensions, counts, keys)."""


class DegenerateGeometryError(ValueError):
    """Two points that must be separated coincide (zero propagation distance)."""


class NumericalError(ArithmeticError):
    """A factorization or inversion failed, or a NaN appeared in an objective."""
