"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (bad layer list, zero width, bad budget, ...)."""


class ShapeError(ValueError):
    """Array shape or length does not match what the model expects."""


class IngestionError(ValueError):
    """CSV or config input could not be parsed or validated."""


class NumericError(ArithmeticError):
    """A numeric routine produced non-finite values or degenerated."""
