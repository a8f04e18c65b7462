"""Exception types shared across the pipeline."""


class AdvLogoError(Exception):
    """Base class for all library errors."""


class DimensionError(AdvLogoError, ValueError):
    """Shapes of operands are incompatible."""


class DomainError(AdvLogoError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class StateError(AdvLogoError, RuntimeError):
    """An object is used in a state it does not support (stale tape, unfrozen map)."""


class NumericError(AdvLogoError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class ParseError(AdvLogoError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedFaceError(ParseError):
    """An OBJ face has a vertex count other than three."""


class MeshIndexError(AdvLogoError, IndexError):
    """A face or vertex index is out of range."""


class ConfigError(AdvLogoError, ValueError):
    """A run configuration is malformed or has unknown keys."""
