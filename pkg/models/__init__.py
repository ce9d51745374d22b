"""Data models for specs, settings and reports.

This package contains Pydantic models for the network description, run
configuration, tool reports and error handling.
"""

from models.network import LayerSpec, NetworkSpec, TensorPayload
from models.reports import (
    ApproxCertificate,
    ComplexityEntry,
    ComplexityReport,
    ComplexityTotals,
    DemoReport,
    EquivalenceReport,
    ErrorRateEstimate,
    ErrorResponse,
    HistoryRow,
    TrainHistory,
    WitnessReport,
)
from models.settings import ApproxPlan, ResNetConfig, SpikeConfig, TrainConfig

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "TensorPayload",
    "ApproxCertificate",
    "ComplexityEntry",
    "ComplexityReport",
    "ComplexityTotals",
    "DemoReport",
    "EquivalenceReport",
    "ErrorRateEstimate",
    "ErrorResponse",
    "HistoryRow",
    "TrainHistory",
    "WitnessReport",
    "ApproxPlan",
    "ResNetConfig",
    "SpikeConfig",
    "TrainConfig",
]
