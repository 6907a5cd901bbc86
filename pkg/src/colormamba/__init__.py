"""NIR-to-RGB translation with padded four-direction selective state-space scans."""

from . import kernels
from .errors import (
    ColorMambaError,
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    NonFiniteError,
    TrainingDiverged,
)
from .networks import ColorMamba, ModelConfig

__version__ = "0.1.0"
KERNEL_BACKEND = kernels.BACKEND

__all__ = [
    "ColorMamba",
    "ModelConfig",
    "ColorMambaError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "NonFiniteError",
    "TrainingDiverged",
    "KERNEL_BACKEND",
]
