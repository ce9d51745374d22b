"""Rewrites between standard, preactivated and DAC formulations.

* A standard ReLU chain is formally the same as a preactivated chain whose
  input filters use the producer's bias (the bias is shared by all
  consumers of a node).
* Replicating an input in front of a standard layer buys nothing: the
  replica weights simply add up.
* A single 1-D DAC unit sum_j w_j relu(b_j + x) needs a two-layer standard
  network with +-1 hidden weights to be written down.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from config import EQUIVALENCE_TOLERANCE
from engine.layers import DenseDacParams, DenseStdParams, dense_dac_forward, dense_std_forward
from models.reports import EquivalenceReport, WitnessReport
from utils.errors import ContractError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

Flavor = Literal["standard", "preactivated_shared", "dac"]


@dataclass(frozen=True)
class PreactivatedLayer:
    """Linear aggregation fed by filtered inputs relu(input_bias + z).

    ``input_bias`` is None for the first layer, whose leaves are the raw inputs.
    """

    weights: np.ndarray
    input_bias: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ChainSpec:
    """Multilayer perceptron in one of three formulations.

    Attributes:
        flavor: ``standard`` (DenseStdParams with relu), ``preactivated_shared``
            (PreactivatedLayer) or ``dac`` (bare DenseDacParams).
        layers: Layer blocks in order.
        stem: Linear map applied to the raw input before a ``dac`` chain.
        final_bias: Bias of the closing filter relu(final_bias + z) of
            preactivated and DAC chains.
    """

    flavor: Flavor
    layers: Tuple
    stem: Optional[np.ndarray] = None
    final_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        widths = [np.shape(layer.weights) for layer in self.layers]
        if self.stem is not None:
            widths.insert(0, np.shape(self.stem))
        for (n_prev, _), (_, m_next) in zip(widths, widths[1:]):
            if n_prev != m_next:
                raise ShapeError.mismatch("chain layer dimensions", (n_prev,), (m_next,))


def evaluate_chain(chain: ChainSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate any chain flavor on a batch ``x`` (batch x m)."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if chain.flavor == "standard":
        for params in chain.layers:
            h = dense_std_forward(params, h)
        return h

    if chain.flavor == "preactivated_shared":
        for layer in chain.layers:
            filtered = h if layer.input_bias is None else np.maximum(layer.input_bias + h, 0)
            h = filtered @ np.asarray(layer.weights).T
    else:
        if chain.stem is not None:
            h = h @ np.asarray(chain.stem).T
        for params in chain.layers:
            h = dense_dac_forward(params, h)
    if chain.final_bias is not None:
        h = np.maximum(chain.final_bias + h, 0)
    return h


def standard_to_preactivated_shared(chain: ChainSpec) -> ChainSpec:
    """Rewrite a standard ReLU chain as a preactivated chain with shared biases.

    Layer ``l`` of the result filters its inputs with the bias of layer
    ``l - 1``; the first layer reads the raw inputs and the closing filter
    uses the last bias, so ``evaluate_chain`` returns identical outputs.
    """
    if chain.flavor != "standard":
        raise ContractError(f"expected a standard chain, got '{chain.flavor}'")
    for params in chain.layers:
        if params.out_activation != "relu":
            raise ContractError("every layer of a standard chain must use relu")

    layers = []
    previous_bias = None
    for params in chain.layers:
        layers.append(PreactivatedLayer(weights=params.weights, input_bias=previous_bias))
        previous_bias = params.bias if params.bias is not None else np.zeros(params.out_features)
    return ChainSpec("preactivated_shared", tuple(layers), final_bias=previous_bias)


def preactivated_to_dac(chain: ChainSpec) -> ChainSpec:
    """Express a preactivated shared-bias chain as DAC layers with b_ij = b_j.

    The first layer has no input filter and becomes the linear ``stem``.
    """
    if chain.flavor != "preactivated_shared":
        raise ContractError(f"expected a preactivated chain, got '{chain.flavor}'")
    first, rest = chain.layers[0], chain.layers[1:]
    dac_layers = tuple(
        DenseDacParams(
            weights=layer.weights,
            dac_biases=np.tile(layer.input_bias, (np.shape(layer.weights)[0], 1)),
        )
        for layer in rest
    )
    return ChainSpec("dac", dac_layers, stem=first.weights, final_bias=chain.final_bias)


def random_standard_chain(
    rng: np.random.Generator, layers: int, width: int, in_features: Optional[int] = None
) -> ChainSpec:
    """Random ReLU chain with ``layers`` layers of ``width`` units."""
    if layers < 1 or width < 1:
        raise ContractError(f"layers and width must be positive, got {layers}, {width}")
    m = in_features or width
    blocks = []
    for _ in range(layers):
        blocks.append(
            DenseStdParams(
                weights=rng.normal(0.0, 1.0 / np.sqrt(m), size=(width, m)),
                bias=rng.normal(0.0, 0.5, size=width),
                out_activation="relu",
            )
        )
        m = width
    return ChainSpec("standard", tuple(blocks))


# --- input replication ---


def replicate_input(x: np.ndarray, r: int) -> np.ndarray:
    """Concatenate ``r`` copies of ``x`` along its last axis."""
    if r < 1:
        raise ContractError(f"replication count must be >= 1, got {r}")
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x] * r, axis=-1)


def split_replicated_layer(
    p: DenseStdParams, r: int, rng: Optional[np.random.Generator] = None
) -> DenseStdParams:
    """Spread each weight over ``r`` replicas (random parts summing to it when ``rng`` is set)."""
    if r < 1:
        raise ContractError(f"replication count must be >= 1, got {r}")
    weights = np.asarray(p.weights, dtype=np.float64)
    n, m = weights.shape
    if rng is None:
        parts = np.repeat(weights[:, None, :] / r, r, axis=1)
    else:
        parts = rng.normal(size=(n, r, m))
        parts[:, -1, :] = weights - parts[:, :-1, :].sum(axis=1)
    return DenseStdParams(parts.reshape(n, r * m), p.bias, p.out_activation)


def standard_replication_collapse(p: DenseStdParams, r: int) -> DenseStdParams:
    """Collapse a layer over ``r`` replicated inputs to one over the original inputs."""
    if r < 1:
        raise ContractError(f"replication count must be >= 1, got {r}")
    n, total = np.shape(p.weights)
    if total % r:
        raise ShapeError(f"{total} inputs cannot be {r} replicas of one input vector")
    collapsed = np.asarray(p.weights, dtype=np.float64).reshape(n, r, total // r).sum(axis=1)
    return DenseStdParams(collapsed, p.bias, p.out_activation)


# --- 1-D DAC unit vs two-layer standard network ---


@dataclass(frozen=True)
class TwoLayerStandard:
    """f(x) = outer_bias + sum_j outer_weights[j] * relu(hidden_biases[j] + hidden_weights[j] * x)."""

    hidden_weights: np.ndarray
    hidden_biases: np.ndarray
    outer_weights: np.ndarray
    outer_bias: float = 0.0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        hidden = np.maximum(self.hidden_biases + x * self.hidden_weights, 0)
        return hidden @ self.outer_weights + self.outer_bias

    @property
    def width(self) -> int:
        return len(self.outer_weights)


def normalize_hidden_layer(
    outer_weights: np.ndarray,
    hidden_weights: np.ndarray,
    hidden_biases: np.ndarray,
    outer_bias: float = 0.0,
) -> TwoLayerStandard:
    """Rescale a 1-D two-layer ReLU net so every hidden weight is +-1.

    Uses w0 * relu(b + w x) = (w0 |w|) * relu(b / |w| + sign(w) x). Units
    with a zero hidden weight are constants and fold into the outer bias.
    """
    w0 = np.asarray(outer_weights, dtype=np.float64).ravel()
    w = np.asarray(hidden_weights, dtype=np.float64).ravel()
    b = np.asarray(hidden_biases, dtype=np.float64).ravel()
    if not (len(w0) == len(w) == len(b)):
        raise ShapeError.mismatch("two-layer coefficients", (len(w0), len(w)), (len(b),))

    zero = w == 0
    constant = float(outer_bias + (w0[zero] * np.maximum(b[zero], 0)).sum())
    keep = ~zero
    scale = np.abs(w[keep])
    return TwoLayerStandard(
        hidden_weights=np.sign(w[keep]),
        hidden_biases=b[keep] / scale,
        outer_weights=w0[keep] * scale,
        outer_bias=constant,
    )


def dac1d_unit(w: np.ndarray, b: np.ndarray) -> DenseDacParams:
    """The single DAC unit sum_j w_j relu(b_j + x) over an input replicated n times."""
    w = np.asarray(w, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if w.shape != b.shape:
        raise ShapeError.mismatch("dac1d coefficients", w.shape, b.shape)
    return DenseDacParams(weights=w[None, :], dac_biases=b[None, :])


def evaluate_dac1d(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    unit = dac1d_unit(w, b)
    column = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return dense_dac_forward(unit, replicate_input(column, unit.in_features))[:, 0]


def dac1d_to_two_layer_standard(w: np.ndarray, b: np.ndarray) -> TwoLayerStandard:
    """Two-layer standard form of the 1-D DAC unit (hidden weights all +1)."""
    w = np.asarray(w, dtype=np.float64).ravel()
    return normalize_hidden_layer(w, np.ones_like(w), b)


# --- demonstrations ---


def non_equivalence_witness(
    samples: int = 81, bias_grid: int = 41, weight_grid: int = 41, tolerance: float = 1e-6
) -> WitnessReport:
    """Search shared-bias reassignments of a two-consumer DAC instance.

    The target feeds one node x to two units with different thresholds,
    y1 = relu(x - 0.5) and y2 = relu(x + 0.5). A shared bias forces both
    units to see the same filtered value relu(b + x), so the best any
    (b, w1, w2) on the grid can do is reported as the deviation.
    """
    xs = np.linspace(-2.0, 2.0, samples)
    targets = np.stack([np.maximum(xs - 0.5, 0), np.maximum(xs + 0.5, 0)])
    weights = np.linspace(-2.0, 2.0, weight_grid)

    best = np.inf
    for bias in np.linspace(-2.0, 2.0, bias_grid):
        filtered = np.maximum(bias + xs, 0)
        # deviation per (output, weight candidate), weights chosen independently per output
        deviation = np.abs(weights[None, :, None] * filtered - targets[:, None, :]).max(axis=2)
        best = min(best, float(deviation.min(axis=1).max()))

    report = WitnessReport(
        target="relu(x - 0.5), relu(x + 0.5)",
        best_deviation=best,
        candidates_tried=bias_grid * weight_grid * weight_grid,
        representable=best <= tolerance,
    )
    logger.info(f"📊 Shared-bias search best deviation: {best:.4f}")
    return report


def run_equivalence(layers: int, width: int, seed: int, samples: int) -> EquivalenceReport:
    """Random standard chain vs its preactivated rewrite on random inputs."""
    started = time.time()
    logger.info("=" * 80)
    logger.info(f"🚀 EQUIVALENCE CHECK: layers={layers}, width={width}, seed={seed}, samples={samples}")

    rng = np.random.default_rng(seed)
    chain = random_standard_chain(rng, layers, width)
    rewritten = standard_to_preactivated_shared(chain)
    x = rng.normal(size=(samples, width))
    deviation = float(np.max(np.abs(evaluate_chain(chain, x) - evaluate_chain(rewritten, x))))

    report = EquivalenceReport(
        layers=layers,
        width=width,
        seed=seed,
        samples=samples,
        max_deviation=deviation,
        tolerance=EQUIVALENCE_TOLERANCE,
        passed=deviation <= EQUIVALENCE_TOLERANCE,
    )
    marker = "✅" if report.passed else "❌"
    logger.info(f"{marker} Max deviation {deviation:.3e} in {time.time() - started:.2f}s")
    return report
