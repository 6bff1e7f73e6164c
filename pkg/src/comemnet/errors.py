class ConfigError(ValueError):
    """Bad shapes, parameters, or inputs supplied by the caller."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""
