"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class NumericError(ArithmeticError):
    """A forward computation produced NaN or Inf, or diverged."""


class TapeError(RuntimeError):
    """Misuse of the autodiff tape (double backward, foreign loss, ...)."""


class ConfigError(ValueError):
    """Invalid model or training configuration."""


class DataError(ValueError):
    """Malformed dataset, window request, or file contents."""
