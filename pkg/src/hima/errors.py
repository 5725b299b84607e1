"""Exception types shared across the package."""


class HimaError(Exception):
    """Base class for package errors."""


class ShapeError(HimaError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(HimaError, ValueError):
    """Invalid or inconsistent configuration value."""


class DataError(HimaError, ValueError):
    """Malformed file, directory layout, or dataset record."""


class NumericsError(HimaError, ArithmeticError):
    """Non-finite values showed up where finite ones are required."""
