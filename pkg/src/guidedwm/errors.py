"""Exception hierarchy shared across the package.

The CLI maps each family to an exit code (config 2, data 3, numerical 4).
"""
from __future__ import annotations


class GuidedWMError(Exception):
    """Base class for every error raised deliberately by this package."""


class DimensionError(GuidedWMError, ValueError):
    """Array shapes or axes do not satisfy an operation's rules."""


class ConfigError(GuidedWMError, ValueError):
    """Invalid or inconsistent configuration / parameter values."""


class DataError(GuidedWMError):
    """Missing, malformed, or corrupt dataset / cache / checkpoint files."""


class NumericalError(GuidedWMError):
    """Non-finite values appeared where finite ones are required."""


class BoundsError(ConfigError, IndexError):
    """An index window falls outside the clip."""
