"""Pydantic models for run configuration.

TrainConfig, ResNetConfig, SpikeConfig and ApproxPlan validate their own
invariants so that a malformed config file fails before any work starts.
"""

from __future__ import annotations

from typing import List, Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from config import (
    DEFAULT_BASE_LR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_L2_KERNEL,
    DEFAULT_LR_DECAY,
    DEFAULT_MOMENTUM,
    DEFAULT_SEED,
    FULL_SCHEDULE_BOUNDARIES,
    FULL_SCHEDULE_ITERS,
    TRAIN_PRECISION,
)


class TrainConfig(BaseModel):
    """SGD protocol: momentum, step schedule, kernel-only L2."""

    base_lr: float = Field(default=DEFAULT_BASE_LR, ge=0)
    lr_boundaries: List[int] = Field(default_factory=lambda: list(FULL_SCHEDULE_BOUNDARIES))
    lr_decay: float = Field(default=DEFAULT_LR_DECAY, gt=0)
    momentum: float = Field(default=DEFAULT_MOMENTUM, ge=0, lt=1)
    l2_kernel: float = Field(default=DEFAULT_L2_KERNEL, ge=0)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    total_iters: int = Field(default=FULL_SCHEDULE_ITERS, ge=1)
    seed: int = DEFAULT_SEED
    precision: Literal["f32", "f64"] = TRAIN_PRECISION
    augmentation: Literal["none", "pad_crop_flip"] = "none"

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        bounds = self.lr_boundaries
        if any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"lr_boundaries must be strictly increasing, got {bounds}")
        if bounds and (bounds[0] < 1 or bounds[-1] >= self.total_iters):
            raise ValueError(
                f"lr_boundaries must lie in [1, total_iters={self.total_iters}), got {bounds}"
            )
        return self

    def lr_at(self, iteration: int) -> float:
        """Step schedule: base_lr * decay ** (number of boundaries <= iteration)."""
        passed = sum(1 for boundary in self.lr_boundaries if iteration >= boundary)
        return self.base_lr * self.lr_decay**passed

    @classmethod
    def scaled(cls, total_iters: int, **overrides) -> "TrainConfig":
        """Shrink the 32k/48k/64k-of-80k schedule proportionally to ``total_iters``."""
        bounds = sorted(
            {
                max(1, round(b * total_iters / FULL_SCHEDULE_ITERS))
                for b in FULL_SCHEDULE_BOUNDARIES
            }
        )
        bounds = [b for b in bounds if b < total_iters]
        return cls(total_iters=total_iters, lr_boundaries=bounds, **overrides)


class ResNetConfig(BaseModel):
    """CIFAR-style ResNet with 6n+2 weighted layers."""

    version: Literal["v1", "v2"] = "v1"
    n_blocks_per_stage: int = Field(default=3, ge=1)
    num_classes: int = Field(default=10, ge=2)
    dac: bool = False
    input_shape: List[int] = Field(default_factory=lambda: [32, 32, 3])
    base_width: int = Field(default=16, ge=1)

    @field_validator("input_shape")
    @classmethod
    def _image_shape(cls, shape: List[int]) -> List[int]:
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"input_shape must be [height, width, channels], got {shape}")
        return shape

    @property
    def depth(self) -> int:
        return 6 * self.n_blocks_per_stage + 2


class SpikeConfig(BaseModel):
    """A shifted, rescaled spike psi_{d,delta}(x - c)."""

    d: int = Field(..., ge=1)
    delta: float = Field(..., gt=0)
    shift: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_shift(self) -> "SpikeConfig":
        if not self.shift:
            self.shift = [0.0] * self.d
        if len(self.shift) != self.d:
            raise ValueError(f"shift must have {self.d} entries, got {len(self.shift)}")
        if any(abs(c) > 1 for c in self.shift):
            raise ValueError(f"shift must lie in [-1, 1]^d, got {self.shift}")
        return self


class ApproxPlan(BaseModel):
    """Riemann-sum plan: uniform cube partition, centers and sampled values.

    Attributes:
        d: Input dimension.
        mesh: Cells per axis; k = mesh ** d.
        delta: Spike radius.
        shrink: Input contraction r; the target sampled at a center c is f(clamp(c / r)).
        centers: k x d cell midpoints.
        values: f sampled at the (contracted) centers.
    """

    d: int = Field(..., ge=1)
    mesh: int = Field(..., ge=1)
    delta: float = Field(..., gt=0)
    shrink: float = Field(default=1.0, gt=0, le=1)
    centers: List[List[float]]
    values: List[float]

    @model_validator(mode="after")
    def _check_partition(self) -> "ApproxPlan":
        k = self.mesh**self.d
        if len(self.centers) != k or len(self.values) != k:
            raise ValueError(f"plan needs exactly k={k} centers and values")
        if any(len(c) != self.d for c in self.centers):
            raise ValueError(f"every center must have {self.d} coordinates")
        if np.abs(np.asarray(self.centers)).max(initial=0) > 1:
            raise ValueError("all centers must lie in [-1, 1]^d")
        return self

    @property
    def k(self) -> int:
        return self.mesh**self.d

    @property
    def cell_volume(self) -> float:
        return 2.0**self.d / self.k

    def centers_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64).reshape(self.k, self.d)

    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)
