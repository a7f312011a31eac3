"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Invalid dataset, annotation, or checkpoint payload (CLI exit code 3)."""


class NumericsError(ArithmeticError):
    """A forward or backward pass produced NaN/Inf (CLI exit code 4)."""


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class UsageError(RuntimeError):
    """An API precondition was violated by the caller."""
