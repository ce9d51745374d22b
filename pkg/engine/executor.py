"""Execution of :class:`~models.network.NetworkSpec` documents.

``trace_shapes`` walks a spec structurally (no parameters needed);
``NetworkRunner`` converts the parameter payloads to numpy once, records
forward passes on a graph for training, evaluates batches for inference
and writes parameters back into a spec on export.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import EVAL_CHUNK, EVAL_ELEMENT_BUDGET
from engine import ops
from engine.autograd import Graph, Var
from engine.layers import (
    apply_conv_dac,
    apply_conv_std,
    apply_dense_dac,
    apply_dense_std,
    apply_sparse_dac,
    he_normal,
)
from models.network import LayerSpec, NetworkSpec, TensorPayload
from utils.errors import ShapeError, SpecError
from utils.logger import get_logger

logger = get_logger(__name__)

Shape = Tuple[int, ...]
ParamKey = Tuple[str, str]

ROLES = {
    "weights": "kernel",
    "kernel": "kernel",
    "dac_biases": "dac_bias",
    "bias": "bias",
    "out_bias": "bias",
    "gamma": "gamma",
    "beta": "beta",
    "running_mean": "statistic",
    "running_var": "statistic",
}


@dataclass(frozen=True)
class TracedLayer:
    name: str
    kind: str
    input_shape: Shape
    output_shape: Shape


def _channels(layer: LayerSpec, shape: Shape) -> int:
    if not shape:
        raise ShapeError(f"{layer.name}: scalar input has no channel axis")
    declared = layer.channels
    if declared is not None and declared != shape[-1]:
        raise ShapeError.mismatch(f"{layer.name} channels", (declared,), shape)
    return shape[-1]


def _features(layer: LayerSpec, shape: Shape) -> Tuple[int, int]:
    if len(shape) != 1:
        raise ShapeError(f"{layer.name}: dense layers need a flat input, got {shape}")
    m = shape[0]
    if layer.in_features is not None and layer.in_features != m:
        raise ShapeError.mismatch(f"{layer.name} in_features", (layer.in_features,), shape)
    if layer.kind == "sparse_dac":
        if not layer.sources:
            raise SpecError(f"{layer.name}: sparse_dac needs a sources table")
        table = np.asarray(layer.sources)
        if table.ndim != 2 or table.min() < 0 or table.max() >= m:
            raise ShapeError(f"{layer.name}: sources must index an input of width {m}")
        n = table.shape[0]
    else:
        n = layer.out_features
    if n is None or n < 1:
        raise SpecError(f"{layer.name}: out_features must be a positive integer")
    if layer.out_features is not None and layer.out_features != n:
        raise ShapeError.mismatch(f"{layer.name} out_features", (layer.out_features,), (n,))
    return m, n


def _conv_dims(layer: LayerSpec, shape: Shape) -> Tuple[int, int, int, Shape]:
    if len(shape) != 3:
        raise ShapeError(f"{layer.name}: conv layers need s x t x m input, got {shape}")
    m = shape[2]
    if layer.in_channels is not None and layer.in_channels != m:
        raise ShapeError.mismatch(f"{layer.name} in_channels", (layer.in_channels,), shape)
    size = layer.kernel_size
    if size is None or size < 1 or size % 2 == 0:
        raise SpecError(f"{layer.name}: kernel_size must be odd, got {size}")
    n = layer.out_channels
    if n is None or n < 1:
        raise SpecError(f"{layer.name}: out_channels must be a positive integer")
    out_h = ops.conv_geometry(shape[0], size, layer.stride, layer.padding)[0]
    out_w = ops.conv_geometry(shape[1], size, layer.stride, layer.padding)[0]
    return size, m, n, (out_h, out_w, n)


def shortcut_geometry(saved: Shape, branch: Shape) -> Tuple[int, int, int]:
    """Stride and channel padding that map the saved tensor onto the branch shape."""
    if len(saved) != len(branch):
        raise ShapeError.mismatch("residual", saved, branch)
    if len(saved) == 1:
        stride = 1
    else:
        stride = max(1, round(saved[0] / branch[0]))
        if -(-saved[0] // stride) != branch[0] or -(-saved[1] // stride) != branch[1]:
            raise ShapeError.mismatch("residual spatial", saved, branch)
    extra = branch[-1] - saved[-1]
    if extra < 0:
        raise ShapeError.mismatch("residual channels", saved, branch)
    return stride, extra // 2, extra - extra // 2


def expected_params(layer: LayerSpec, shape: Shape) -> Dict[str, Shape]:
    """Parameter names and shapes a layer needs for the given input shape."""
    kind = layer.kind
    if kind in ("dense_std", "dense_dac", "sparse_dac"):
        m, n = _features(layer, shape)
        edges = (n, np.asarray(layer.sources).shape[1]) if kind == "sparse_dac" else (n, m)
        params: Dict[str, Shape] = {"weights": edges}
        if kind != "dense_std":
            params["dac_biases"] = edges
        if layer.use_bias:
            params["bias" if kind == "dense_std" else "out_bias"] = (n,)
        return params
    if kind in ("conv_std", "conv_dac"):
        size, m, n, _ = _conv_dims(layer, shape)
        params = {"kernel": (size, size, n, m)}
        if kind == "conv_dac":
            params["dac_biases"] = (n, m)
        if layer.use_bias:
            params["bias" if kind == "conv_std" else "out_bias"] = (n,)
        return params
    if kind == "batchnorm":
        c = (_channels(layer, shape),)
        params = {"gamma": c, "running_mean": c, "running_var": c}
        if layer.use_shift:
            params["beta"] = c
        return params
    if kind == "bias":
        return {"bias": (_channels(layer, shape),)}
    return {}


def trace_shapes(spec: NetworkSpec, input_shape: Optional[Sequence[int]] = None) -> List[TracedLayer]:
    """Per-layer output shapes for a per-sample input shape.

    Raises:
        ShapeError: If a layer does not fit its input.
        SpecError: If the residual markers are unbalanced.
    """
    shape: Shape = tuple(input_shape if input_shape is not None else spec.input_shape)
    stack: List[Shape] = []
    traced: List[TracedLayer] = []
    for layer in spec.layers:
        kind = layer.kind
        before = shape
        if kind in ("dense_std", "dense_dac", "sparse_dac"):
            shape = (_features(layer, shape)[1],)
        elif kind in ("conv_std", "conv_dac"):
            shape = _conv_dims(layer, shape)[3]
        elif kind in ("batchnorm", "bias"):
            _channels(layer, shape)
        elif kind == "gap":
            if len(shape) != 3:
                raise ShapeError(f"{layer.name}: global average pooling needs s x t x c, got {shape}")
            shape = (shape[2],)
        elif kind == "residual_begin":
            stack.append(shape)
        elif kind == "residual_end":
            if not stack:
                raise SpecError(f"{layer.name}: residual_end without residual_begin")
            shortcut_geometry(stack.pop(), shape)
        traced.append(TracedLayer(layer.name, kind, before, shape))
    if stack:
        raise SpecError(f"{len(stack)} residual block(s) left open")
    return traced


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkSpec:
    """Fill missing parameters: He-normal kernels, zero biases and DAC biases, unit gamma."""
    layers = []
    for traced, layer in zip(trace_shapes(spec), spec.layers):
        params = dict(layer.params)
        for key, shape in expected_params(layer, traced.input_shape).items():
            if key in params:
                continue
            if ROLES[key] == "kernel":
                fan_in = int(np.prod(shape[:-2])) * shape[-1] if len(shape) == 4 else shape[-1]
                value = he_normal(rng, shape, fan_in)
            elif key in ("gamma", "running_var"):
                value = np.ones(shape)
            else:
                value = np.zeros(shape)
            params[key] = TensorPayload.from_array(value)
        layers.append(layer.model_copy(update={"params": params}))
    return spec.model_copy(update={"layers": layers})


def count_parameters(spec: NetworkSpec, trainable_only: bool = True) -> int:
    """Number of parameters the spec declares (running statistics excluded by default)."""
    total = 0
    for traced, layer in zip(trace_shapes(spec), spec.layers):
        for key, shape in expected_params(layer, traced.input_shape).items():
            if trainable_only and ROLES[key] == "statistic":
                continue
            if layer.kind == "sparse_dac" and key in ("weights", "dac_biases"):
                # padding edges of the gather table are not parameters
                weights = layer.param_array("weights")
                if weights is not None:
                    total += int(np.count_nonzero(weights))
                    continue
            total += int(np.prod(shape))
    return total


class NetworkRunner:
    """Numpy-backed executor for a parameterized spec.

    Args:
        spec: Spec with every parameter present (see :func:`init_params`).
        precision: Graph precision for forward passes.
    """

    def __init__(self, spec: NetworkSpec, precision: str = "f64"):
        self.spec = spec
        self.precision = precision
        self.trace = trace_shapes(spec)
        self.arrays: Dict[str, Dict[str, np.ndarray]] = {}
        self.sources: Dict[str, np.ndarray] = {}
        for traced, layer in zip(self.trace, spec.layers):
            expected = expected_params(layer, traced.input_shape)
            arrays = {}
            for key, shape in expected.items():
                payload = layer.params.get(key)
                if payload is None:
                    raise SpecError(f"{layer.name}: missing parameter '{key}'")
                array = payload.to_array()
                if array.shape != shape:
                    raise ShapeError.mismatch(f"{layer.name}.{key}", array.shape, shape)
                arrays[key] = array
            unexpected = set(layer.params) - set(expected)
            if unexpected:
                raise SpecError(f"{layer.name}: unexpected parameters {sorted(unexpected)}")
            self.arrays[layer.name] = arrays
            if layer.kind == "sparse_dac":
                self.sources[layer.name] = np.asarray(layer.sources, dtype=np.intp)

    # --- parameters ---

    def parameter_keys(self) -> List[ParamKey]:
        """Trainable parameters in layer order."""
        return [
            (name, key)
            for name, arrays in self.arrays.items()
            for key in arrays
            if ROLES[key] != "statistic"
        ]

    def role(self, key: ParamKey) -> str:
        return ROLES[key[1]]

    def get(self, key: ParamKey) -> np.ndarray:
        return self.arrays[key[0]][key[1]]

    def set(self, key: ParamKey, value: np.ndarray) -> None:
        current = self.arrays[key[0]][key[1]]
        if np.shape(value) != current.shape:
            raise ShapeError.mismatch(f"{key[0]}.{key[1]}", np.shape(value), current.shape)
        self.arrays[key[0]][key[1]] = np.asarray(value, dtype=np.float64)

    def bind(self, graph: Graph) -> Dict[ParamKey, Var]:
        """Record every trainable parameter as a graph parameter."""
        return {
            key: graph.parameter(self.get(key), name=f"{key[0]}.{key[1]}")
            for key in self.parameter_keys()
        }

    # --- execution ---

    def forward(
        self,
        graph: Graph,
        x: Var,
        bound: Optional[Dict[ParamKey, Var]] = None,
        training: bool = False,
    ) -> Tuple[Var, Dict[str, Tuple[np.ndarray, np.ndarray]]]:
        """Record the network on ``graph``.

        Args:
            graph: Target tape.
            x: Batch input (batch x input_shape).
            bound: Parameter vars from :meth:`bind`; constants are recorded when omitted.
            training: Batch statistics for batch norm when True.

        Returns:
            Output var and the batch statistics of every batch-norm layer.
        """
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError.mismatch("network input", x.shape[1:], self.spec.input_shape)

        def param(layer: LayerSpec, key: str) -> Optional[Var]:
            if key not in self.arrays[layer.name]:
                return None
            if bound is not None and (layer.name, key) in bound:
                return bound[(layer.name, key)]
            return graph.constant(self.arrays[layer.name][key])

        stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        stack: List[Var] = []
        h = x
        for layer in self.spec.layers:
            kind = layer.kind
            if kind == "dense_std":
                h = apply_dense_std(h, param(layer, "weights"), param(layer, "bias"), layer.out_activation)
            elif kind == "dense_dac":
                h = apply_dense_dac(
                    h, param(layer, "weights"), param(layer, "dac_biases"),
                    param(layer, "out_bias"), layer.out_activation,
                )
            elif kind == "sparse_dac":
                h = apply_sparse_dac(
                    h, self.sources[layer.name], param(layer, "weights"),
                    param(layer, "dac_biases"), param(layer, "out_bias"), layer.out_activation,
                )
            elif kind == "conv_std":
                h = apply_conv_std(
                    h, param(layer, "kernel"), param(layer, "bias"),
                    layer.stride, layer.padding, layer.out_activation,
                )
            elif kind == "conv_dac":
                h = apply_conv_dac(
                    h, param(layer, "kernel"), param(layer, "dac_biases"), param(layer, "out_bias"),
                    layer.stride, layer.padding, layer.out_activation,
                )
            elif kind == "batchnorm":
                arrays = self.arrays[layer.name]
                h, mu, var = ops.batchnorm(
                    h, param(layer, "gamma"), param(layer, "beta"),
                    arrays["running_mean"], arrays["running_var"], layer.epsilon, training,
                )
                stats[layer.name] = (mu, var)
            elif kind == "relu":
                h = ops.relu(h)
            elif kind == "bias":
                h = ops.add(h, param(layer, "bias"))
            elif kind == "gap":
                h = ops.global_avg_pool(h)
            elif kind == "residual_begin":
                stack.append(h)
            elif kind == "residual_end":
                saved = stack.pop()
                stride, before, after = shortcut_geometry(saved.shape[1:], h.shape[1:])
                shortcut = ops.pad_channels(ops.subsample(saved, stride), before, after)
                h = ops.add(h, shortcut)
            else:  # pragma: no cover - LayerKind is a closed Literal
                raise SpecError(f"Unknown layer kind '{kind}'")
        return h, stats

    def commit_batch_stats(self, stats: Dict[str, Tuple[np.ndarray, np.ndarray]]) -> None:
        """Fold batch statistics into the running estimates."""
        for layer in self.spec.layers:
            if layer.name not in stats:
                continue
            mu, var = stats[layer.name]
            arrays = self.arrays[layer.name]
            rate = layer.momentum
            arrays["running_mean"] = rate * arrays["running_mean"] + (1 - rate) * mu
            arrays["running_var"] = rate * arrays["running_var"] + (1 - rate) * var

    def _sample_cost(self) -> int:
        cost = 1
        for traced, layer in zip(self.trace, self.spec.layers):
            size = int(np.prod(traced.output_shape)) if traced.output_shape else 1
            if layer.kind in ("dense_dac", "sparse_dac"):
                size = int(np.prod(self.arrays[layer.name]["weights"].shape))
            elif layer.kind == "conv_dac":
                h, w, m = traced.input_shape
                pad = layer.kernel_size - 1
                size = (h + pad) * (w + pad) * m * layer.out_channels
            cost = max(cost, size)
        return cost

    def chunk_size(self) -> int:
        return int(max(1, min(EVAL_CHUNK, EVAL_ELEMENT_BUDGET // self._sample_cost())))

    def predict(self, x: np.ndarray, threads: int = 1) -> np.ndarray:
        """Inference-mode outputs for a batch, evaluated in chunks.

        Chunks are independent graphs over read-only parameters; with
        ``threads > 1`` they run on a thread pool and are reassembled in order.
        """
        x = np.asarray(x)
        chunk = self.chunk_size()
        starts = list(range(0, len(x), chunk))

        def run(start: int) -> np.ndarray:
            graph = Graph(self.precision)
            out, _ = self.forward(graph, graph.constant(x[start : start + chunk]))
            return np.array(out.value)

        if not starts:
            width = self.trace[-1].output_shape if self.trace else tuple(self.spec.input_shape)
            return np.zeros((0,) + tuple(width))
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run, starts))
        else:
            parts = [run(start) for start in starts]
        return np.concatenate(parts, axis=0)

    def export(self) -> NetworkSpec:
        """Spec with the current parameter arrays written back."""
        layers = []
        for layer in self.spec.layers:
            params = {key: TensorPayload.from_array(value) for key, value in self.arrays[layer.name].items()}
            layers.append(layer.model_copy(update={"params": params}))
        return self.spec.model_copy(update={"layers": layers})
