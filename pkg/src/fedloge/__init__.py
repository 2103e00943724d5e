"""Federated long-tailed learning with a frozen sparse ETF head and
feature-norm realignment."""
from .errors import (CapacityError, ConfigError, DegenerateError, DimensionError, FedLoGeError,
                     NumericError, ParseError, ProtocolError, StageError, ValidationError)
from .estimators import FedLoGeClassifier, SparseETFHead
from .numerics import RngStream, SgdConfig

__version__ = "0.1.0"

__all__ = [
    "FedLoGeClassifier", "SparseETFHead", "RngStream", "SgdConfig",
    "FedLoGeError", "DimensionError", "DegenerateError", "NumericError", "ProtocolError",
    "ValidationError", "ParseError", "ConfigError", "CapacityError", "StageError",
]
