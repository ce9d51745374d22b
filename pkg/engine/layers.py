"""Standard and DAC layers.

A standard unit aggregates first and filters afterwards,
``out_i = psi(b_i + sum_j w_ij * y_j)``. A DAC unit filters every incoming
edge with its own threshold before aggregating,
``out_i = psi(b_i + sum_j w_ij * relu(b_ij + y_j))``.

Parameter containers are frozen dataclasses over numpy arrays. The
``apply_*`` functions record a layer on a graph (used by the executor and
the trainer); the ``*_forward`` functions are array-in/array-out
conveniences built on a throwaway graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import BN_EPSILON, BN_MOMENTUM
from engine import ops
from engine.autograd import Graph, Var
from utils.errors import ContractError, ShapeError

ACTIVATIONS = ("none", "relu")


def _check_activation(name: str) -> None:
    if name not in ACTIVATIONS:
        raise ContractError(f"out_activation must be one of {ACTIVATIONS}, got '{name}'")


def _check_vector(name: str, vector: Optional[np.ndarray], size: int) -> None:
    if vector is not None and np.shape(vector) != (size,):
        raise ShapeError.mismatch(name, np.shape(vector), (size,))


# --- parameter containers ---


@dataclass(frozen=True)
class DenseStdParams:
    weights: np.ndarray  # n x m
    bias: Optional[np.ndarray] = None
    out_activation: str = "none"

    def __post_init__(self):
        if np.ndim(self.weights) != 2:
            raise ShapeError(f"dense weights must be n x m, got {np.shape(self.weights)}")
        _check_vector("dense bias", self.bias, self.out_features)
        _check_activation(self.out_activation)

    @property
    def in_features(self) -> int:
        return int(np.shape(self.weights)[1])

    @property
    def out_features(self) -> int:
        return int(np.shape(self.weights)[0])


@dataclass(frozen=True)
class DenseDacParams:
    weights: np.ndarray  # n x m, w_ij
    dac_biases: np.ndarray  # n x m, b_ij (one per edge)
    out_bias: Optional[np.ndarray] = None
    out_activation: str = "none"

    def __post_init__(self):
        if np.ndim(self.weights) != 2:
            raise ShapeError(f"dense weights must be n x m, got {np.shape(self.weights)}")
        if np.shape(self.dac_biases) != np.shape(self.weights):
            raise ShapeError.mismatch(
                "dac_biases vs weights", np.shape(self.dac_biases), np.shape(self.weights)
            )
        _check_vector("out_bias", self.out_bias, self.out_features)
        _check_activation(self.out_activation)

    @property
    def in_features(self) -> int:
        return int(np.shape(self.weights)[1])

    @property
    def out_features(self) -> int:
        return int(np.shape(self.weights)[0])

    @property
    def is_bare(self) -> bool:
        """True without output bias and output activation."""
        return self.out_bias is None and self.out_activation == "none"


@dataclass(frozen=True)
class SparseDacParams:
    """DAC units over gathered inputs (``sources[i, f]`` indexes the input)."""

    sources: np.ndarray  # n x F, integer
    weights: np.ndarray  # n x F
    dac_biases: np.ndarray  # n x F
    in_features: int
    out_bias: Optional[np.ndarray] = None
    out_activation: str = "none"

    def __post_init__(self):
        shapes = {np.shape(self.sources), np.shape(self.weights), np.shape(self.dac_biases)}
        if len(shapes) != 1 or np.ndim(self.weights) != 2:
            raise ShapeError(f"sparse_dac tables must share an n x F shape, got {shapes}")
        _check_vector("out_bias", self.out_bias, self.out_features)
        _check_activation(self.out_activation)

    @property
    def out_features(self) -> int:
        return int(np.shape(self.weights)[0])

    @property
    def edge_count(self) -> int:
        """Edges with a non-zero weight (padding edges excluded)."""
        return int(np.count_nonzero(self.weights))


@dataclass(frozen=True)
class Conv2dStdParams:
    kernel: np.ndarray  # L x L x n x m
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: str = "same"
    out_activation: str = "none"

    def __post_init__(self):
        _check_conv_kernel(self.kernel)
        _check_vector("conv bias", self.bias, self.out_channels)
        _check_activation(self.out_activation)

    @property
    def out_channels(self) -> int:
        return int(np.shape(self.kernel)[2])


@dataclass(frozen=True)
class Conv2dDacParams:
    kernel: np.ndarray  # L x L x n x m
    dac_biases: np.ndarray  # n x m, position independent
    out_bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: str = "same"
    out_activation: str = "none"

    def __post_init__(self):
        _check_conv_kernel(self.kernel)
        expected = tuple(np.shape(self.kernel)[2:])
        if np.shape(self.dac_biases) != expected:
            raise ShapeError.mismatch("conv dac_biases vs (n, m)", np.shape(self.dac_biases), expected)
        _check_vector("out_bias", self.out_bias, self.out_channels)
        _check_activation(self.out_activation)

    @property
    def out_channels(self) -> int:
        return int(np.shape(self.kernel)[2])


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: Optional[np.ndarray]
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        channels = np.shape(self.gamma)
        for name in ("running_mean", "running_var"):
            if np.shape(getattr(self, name)) != channels:
                raise ShapeError.mismatch(name, np.shape(getattr(self, name)), channels)
        if self.beta is not None and np.shape(self.beta) != channels:
            raise ShapeError.mismatch("beta", np.shape(self.beta), channels)


def _check_conv_kernel(kernel: np.ndarray) -> None:
    shape = np.shape(kernel)
    if len(shape) != 4 or shape[0] != shape[1]:
        raise ShapeError(f"conv kernel must be L x L x n x m, got {shape}")
    if shape[0] % 2 == 0:
        raise ContractError(f"conv kernel size must be odd, got {shape[0]}")


# --- graph-level application ---


def finish(z: Var, out_bias: Optional[Var], activation: str) -> Var:
    """Apply the optional output bias and output activation."""
    if out_bias is not None:
        z = ops.add(z, out_bias)
    if activation == "relu":
        z = ops.relu(z)
    return z


def apply_dense_std(y: Var, weights: Var, bias: Optional[Var], activation: str = "none") -> Var:
    if y.value.ndim != 2 or y.shape[1] != weights.shape[1]:
        raise ShapeError.mismatch("dense_std input vs weights", y.shape, weights.shape)
    return finish(ops.matmul(y, ops.transpose(weights)), bias, activation)


def apply_dense_dac(
    y: Var, weights: Var, dac_biases: Var, out_bias: Optional[Var], activation: str = "none"
) -> Var:
    return finish(ops.dense_dac(y, weights, dac_biases), out_bias, activation)


def apply_sparse_dac(
    y: Var,
    sources: np.ndarray,
    weights: Var,
    dac_biases: Var,
    out_bias: Optional[Var],
    activation: str = "none",
) -> Var:
    return finish(ops.sparse_dac(y, sources, weights, dac_biases), out_bias, activation)


def apply_conv_std(
    y: Var, kernel: Var, bias: Optional[Var], stride: int, padding: str, activation: str = "none"
) -> Var:
    return finish(ops.conv2d_raw(y, kernel, stride, padding), bias, activation)


def apply_conv_dac(
    y: Var,
    kernel: Var,
    dac_biases: Var,
    out_bias: Optional[Var],
    stride: int,
    padding: str,
    activation: str = "none",
    cached: bool = True,
) -> Var:
    z = ops.conv2d_dac(y, kernel, dac_biases, stride, padding, cached=cached)
    return finish(z, out_bias, activation)


def _optional(graph: Graph, value: Optional[np.ndarray]) -> Optional[Var]:
    return None if value is None else graph.constant(value)


# --- array-level forwards ---


def dense_std_forward(p: DenseStdParams, y: np.ndarray) -> np.ndarray:
    """out_activation(bias + y @ weights.T), rowwise."""
    graph = Graph()
    out = apply_dense_std(
        graph.constant(y), graph.constant(p.weights), _optional(graph, p.bias), p.out_activation
    )
    return np.array(out.value)


def dense_dac_forward(p: DenseDacParams, y: np.ndarray) -> np.ndarray:
    """psi(b_i + sum_j w_ij * relu(b_ij + y_j)) for every output i."""
    graph = Graph()
    out = apply_dense_dac(
        graph.constant(y),
        graph.constant(p.weights),
        graph.constant(p.dac_biases),
        _optional(graph, p.out_bias),
        p.out_activation,
    )
    return np.array(out.value)


def dense_dac_factorized(p: DenseDacParams, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate a bare DAC dense layer as an embedding followed by projections.

    Row ``i`` of the embedding is ``relu(b_i + z)``, a point in the
    non-negative orthant of R^m; output ``i`` is its inner product with
    ``w_i``.

    Raises:
        ContractError: If the layer has an output bias or output activation.
    """
    if not p.is_bare:
        raise ContractError("factorized evaluation is defined for bare DAC layers only")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (p.in_features,):
        raise ShapeError.mismatch("factorized input", z.shape, (p.in_features,))
    embedding = np.maximum(z + np.asarray(p.dac_biases, dtype=np.float64), 0)
    return embedding, ops.dac_aggregate(embedding, np.asarray(p.weights, dtype=np.float64))


def sparse_dac_forward(p: SparseDacParams, y: np.ndarray) -> np.ndarray:
    graph = Graph()
    out = apply_sparse_dac(
        graph.constant(y),
        p.sources,
        graph.constant(p.weights),
        graph.constant(p.dac_biases),
        _optional(graph, p.out_bias),
        p.out_activation,
    )
    return np.array(out.value)


def conv2d_std_forward(p: Conv2dStdParams, y: np.ndarray) -> np.ndarray:
    graph = Graph()
    out = apply_conv_std(
        graph.constant(y),
        graph.constant(p.kernel),
        _optional(graph, p.bias),
        p.stride,
        p.padding,
        p.out_activation,
    )
    return np.array(out.value)


def conv2d_dac_forward(p: Conv2dDacParams, y: np.ndarray, cached: bool = True) -> np.ndarray:
    """DAC convolution; ``cached=False`` recomputes activations per kernel offset."""
    graph = Graph()
    out = apply_conv_dac(
        graph.constant(y),
        graph.constant(p.kernel),
        graph.constant(p.dac_biases),
        _optional(graph, p.out_bias),
        p.stride,
        p.padding,
        p.out_activation,
        cached=cached,
    )
    return np.array(out.value)


def batchnorm_forward(p: BatchNormParams, y: np.ndarray, training: bool) -> np.ndarray:
    """Batch normalization over every axis but the last (channel) one."""
    graph = Graph()
    out, _, _ = ops.batchnorm(
        graph.constant(y),
        graph.constant(p.gamma),
        _optional(graph, p.beta),
        p.running_mean,
        p.running_var,
        p.epsilon,
        training,
    )
    return np.array(out.value)


# --- initialization ---


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Normal draws with standard deviation sqrt(2 / fan_in)."""
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)

