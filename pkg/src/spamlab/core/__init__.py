"""
核心功能模块
"""

from .config_manager import ConfigManager, ConfigValidationError
from .exceptions import (
    ContainerFormatError,
    DimensionMismatch,
    InvalidConfig,
    IsolatedNode,
    NoConvergence,
    NonDeterministicLoss,
    NonSquareInput,
    ProfileIOError,
    ShapeError,
    SpamlabError,
)
from .rng import Rng

__all__ = [
    'ConfigManager', 'ConfigValidationError', 'Rng',
    'SpamlabError', 'DimensionMismatch', 'ShapeError', 'IsolatedNode', 'NoConvergence',
    'NonSquareInput', 'NonDeterministicLoss', 'InvalidConfig', 'ContainerFormatError', 'ProfileIOError',
]
