"""Online L-BFGS learning and noise-calibrated unlearning with a privacy odometer."""

from .baselines import ONS, OGD, AdaGrad
from .errors import (
    CapacityExhausted,
    ComparatorError,
    ConfigError,
    DimensionMismatch,
    EmptyMemory,
    MemPairError,
    StreamFormatError,
    StreamValidationError,
)
from .lbfgs import LbfgsMemory, spectral_diagnostics
from .model import HyperParams, LossModel
from .odometer import Odometer
from .pair import MemoryPair, Prediction

__all__ = [
    "AdaGrad",
    "CapacityExhausted",
    "ComparatorError",
    "ConfigError",
    "DimensionMismatch",
    "EmptyMemory",
    "HyperParams",
    "LbfgsMemory",
    "LossModel",
    "MemPairError",
    "MemoryPair",
    "OGD",
    "ONS",
    "Odometer",
    "Prediction",
    "StreamFormatError",
    "StreamValidationError",
    "spectral_diagnostics",
]
__version__ = "0.1.0"
