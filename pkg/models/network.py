"""Pydantic models for the serializable network description.

A :class:`NetworkSpec` is the document shared by the ResNet builder, the
trainer, the complexity analyzer and the approximator. Parameter tensors
live inside their layer as :class:`TensorPayload` entries.
"""

from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from config import BN_EPSILON, BN_MOMENTUM, SPEC_VERSION

LayerKind = Literal[
    "dense_std",
    "dense_dac",
    "sparse_dac",
    "conv_std",
    "conv_dac",
    "batchnorm",
    "relu",
    "bias",
    "gap",
    "residual_begin",
    "residual_end",
]

PARAMETERIZED_KINDS = {"dense_std", "dense_dac", "sparse_dac", "conv_std", "conv_dac", "batchnorm", "bias"}


class TensorPayload(BaseModel):
    """A float tensor: row-major data plus shape.

    Attributes:
        shape: Extent per axis.
        data: Flat row-major values (nested lists are accepted and flattened).
        blob: Sidecar file name; only set on documents read without resolving blobs.
    """

    shape: List[int] = Field(..., description="Extent per axis.")
    data: Optional[List[float]] = Field(default=None, description="Row-major values.")
    blob: Optional[str] = Field(default=None, description="Sidecar blob file name.")

    @field_validator("data", mode="before")
    @classmethod
    def _flatten(cls, value):
        if value is None:
            return None
        return np.asarray(value, dtype=np.float64).ravel().tolist()

    @field_serializer("data")
    def _nest(self, data: Optional[List[float]]):
        if data is None:
            return None
        if not self.shape:
            return data[0]
        return np.asarray(data, dtype=np.float64).reshape(self.shape).tolist()

    @classmethod
    def from_array(cls, array: np.ndarray) -> "TensorPayload":
        array = np.asarray(array, dtype=np.float64)
        return cls(shape=list(array.shape), data=array.ravel().tolist())

    def to_array(self) -> np.ndarray:
        if self.data is None:
            raise ValueError(f"Tensor blob '{self.blob}' has not been resolved")
        return np.asarray(self.data, dtype=np.float64).reshape(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class LayerSpec(BaseModel):
    """One layer of a :class:`NetworkSpec`."""

    model_config = ConfigDict(extra="forbid")

    kind: LayerKind
    name: str = Field(..., description="Unique layer name.")
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel_size: Optional[int] = None
    stride: int = 1
    padding: Literal["same", "valid"] = "same"
    use_bias: bool = Field(default=False, description="Output bias b_i present.")
    out_activation: Literal["none", "relu"] = "none"
    channels: Optional[int] = Field(default=None, description="batchnorm / bias width.")
    use_shift: bool = Field(default=True, description="batchnorm shift beta present.")
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM
    sources: Optional[List[List[int]]] = Field(
        default=None, description="sparse_dac gather table (n x F input indices)."
    )
    params: Dict[str, TensorPayload] = Field(default_factory=dict)

    def param_array(self, key: str) -> Optional[np.ndarray]:
        payload = self.params.get(key)
        return None if payload is None else payload.to_array()


class NetworkSpec(BaseModel):
    """Serializable network: ordered layers plus free-form metadata.

    ``meta`` carries the construction origin, e.g.
    ``{"family": "resnet", "version": "v1", "n": 3, "dac": true}``.
    """

    version: int = SPEC_VERSION
    name: str = "network"
    input_shape: List[int] = Field(..., description="Per-sample input shape.")
    meta: Dict[str, Any] = Field(default_factory=dict)
    layers: List[LayerSpec] = Field(default_factory=list)

    @field_validator("layers")
    @classmethod
    def _unique_names(cls, layers: List[LayerSpec]) -> List[LayerSpec]:
        seen = set()
        for layer in layers:
            if layer.name in seen:
                raise ValueError(f"Duplicate layer name '{layer.name}'")
            seen.add(layer.name)
        return layers

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def strip_params(self) -> "NetworkSpec":
        """Copy without parameter tensors (structural comparison)."""
        return self.model_copy(
            update={"layers": [layer.model_copy(update={"params": {}}) for layer in self.layers]},
            deep=True,
        )

    @property
    def has_params(self) -> bool:
        return any(layer.params for layer in self.layers)
