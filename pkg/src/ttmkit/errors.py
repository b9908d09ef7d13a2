"""Exception types raised across the package."""

from .numkit.tensor import ContractError, DimensionError, NonFiniteError


class ConfigError(ValueError):
    """Invalid model, scenario, or run configuration."""


class SingularityError(ArithmeticError):
    """Gram-Schmidt input collapsed (near-zero or near-parallel vectors)."""


class LengthError(ValueError):
    """Input sequence or waveform is too short or too long."""


class DataError(ValueError):
    """Malformed data: bad labels, corrupt files, unknown format versions."""


__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "LengthError",
    "NonFiniteError",
    "SingularityError",
]
