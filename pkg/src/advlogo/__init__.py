"""Adversarial logo textures on 3D person meshes against a differentiable detector."""

from .errors import (AdvLogoError, ConfigError, DimensionError, DomainError, MeshIndexError,
                     NumericError, ParseError, StateError, UnsupportedFaceError)

__version__ = "0.1.0"
