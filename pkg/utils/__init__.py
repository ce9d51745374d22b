"""Utility modules for dacnet.

This package contains the logging configuration, the exception hierarchy
and file handling for specs, blobs, CSV tables and config files.
"""

from utils.errors import (
    ContractError,
    DacnetError,
    DatasetError,
    DivergenceError,
    ParameterSearchError,
    ShapeError,
    SpecError,
)
from utils.logger import get_logger

__all__ = [
    "ContractError",
    "DacnetError",
    "DatasetError",
    "DivergenceError",
    "ParameterSearchError",
    "ShapeError",
    "SpecError",
    "get_logger",
]
