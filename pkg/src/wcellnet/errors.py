class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class GraphError(RuntimeError):
    """Raised when the autodiff graph is used outside its contract."""


class FormatError(ValueError):
    """Raised for malformed checkpoint, stack or image files."""


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values."""
