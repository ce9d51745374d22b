"""FLOPs and weight counts of standard and DAC layers.

Closed-form counts cover dense, sparse and convolution layers. The
instrumented interpreter runs a network on one sample and counts every
multiply and add it executes, one FLOP each; activations and comparisons
are free. Accumulating T terms into a zero-initialized sum counts T adds,
and the output bias add is always executed (with 0 when the bias is
absent), which is the convention behind (2m + 1)n.

Batch norm, bias layers, pooling and residual additions have no formula;
they are counted by the interpreter only and reported as ``uncovered``.
"""

from __future__ import annotations

import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from engine import ops
from engine.executor import (
    ROLES,
    TracedLayer,
    expected_params,
    init_params,
    shortcut_geometry,
    trace_shapes,
)
from models.network import LayerSpec, NetworkSpec
from models.reports import ComplexityEntry, ComplexityReport, ComplexityTotals
from utils.errors import ContractError, SpecError
from utils.logger import get_logger

logger = get_logger(__name__)

COVERED_KINDS = ("dense_std", "dense_dac", "sparse_dac", "conv_std", "conv_dac")


def _check_kind(kind: str) -> None:
    if kind not in ("std", "dac"):
        raise ContractError(f"layer kind must be 'std' or 'dac', got '{kind}'")


def _check_positive(**dims: int) -> None:
    for name, value in dims.items():
        if value < 1:
            raise ContractError(f"{name} must be >= 1, got {value}")


def _check_kernel(L: int) -> None:
    _check_positive(L=L)
    if L % 2 == 0:
        raise ContractError(f"kernel size L must be odd, got {L}")


# --- formulas ---


def flops_dense(kind: str, m: int, n: int) -> int:
    """std: (2m + 1)n; dac: (3m + 1)n."""
    _check_kind(kind)
    _check_positive(m=m, n=n)
    return (2 * m + 1) * n if kind == "std" else (3 * m + 1) * n


def weights_dense(kind: str, m: int, n: int) -> int:
    """std: (m + 1)n; dac: (2m + 1)n."""
    _check_kind(kind)
    _check_positive(m=m, n=n)
    return (m + 1) * n if kind == "std" else (2 * m + 1) * n


def flops_sparse(edges: int, n: int) -> int:
    """Gathered DAC layer with E real edges: 3E + n."""
    _check_positive(n=n)
    return 3 * edges + n


def weights_sparse(edges: int, n: int) -> int:
    _check_positive(n=n)
    return 2 * edges + n


def flops_conv(
    kind: str,
    L: int,
    m: int,
    n: int,
    s: int,
    t: int,
    in_s: Optional[int] = None,
    in_t: Optional[int] = None,
) -> int:
    """std: (2L^2 m + 1) n s t; dac adds m n s_in t_in for the cached activations.

    ``s x t`` is the output grid; the activation plane is computed once over
    the input grid ``in_s x in_t`` (equal to the output grid by default).
    """
    _check_kind(kind)
    _check_kernel(L)
    _check_positive(m=m, n=n, s=s, t=t)
    standard = (2 * L * L * m + 1) * n * s * t
    if kind == "std":
        return standard
    return m * n * (in_s or s) * (in_t or t) + standard


def weights_conv(kind: str, L: int, m: int, n: int) -> int:
    """std: (L^2 m + 1)n; dac: (m(1 + L^2) + 1)n."""
    _check_kind(kind)
    _check_kernel(L)
    _check_positive(m=m, n=n)
    return (L * L * m + 1) * n if kind == "std" else (m * (1 + L * L) + 1) * n


# --- instrumented interpreter ---


class FlopCounter:
    """numpy primitives that count the scalar operations they execute."""

    def __init__(self):
        self.adds = 0
        self.mults = 0

    @property
    def total(self) -> int:
        return self.adds + self.mults

    def add(self, a, b) -> np.ndarray:
        out = np.add(a, b)
        self.adds += out.size
        return out

    def mul(self, a, b) -> np.ndarray:
        out = np.multiply(a, b)
        self.mults += out.size
        return out

    def accumulate(self, terms: np.ndarray, axis) -> np.ndarray:
        """Sum along ``axis`` into a zero accumulator: one add per term."""
        self.adds += terms.size
        return terms.sum(axis=axis)

    def scatter_accumulate(self, size: int, index: np.ndarray, terms: np.ndarray) -> np.ndarray:
        out = np.zeros(size)
        np.add.at(out, index, terms)
        self.adds += terms.size
        return out


class InstrumentedInterpreter:
    """Single-sample forward pass that tallies FLOPs per layer.

    Args:
        spec: Network; missing parameters are filled with a fixed-seed init.
        cached: Compute each DAC conv activation plane once (True) or once
            per kernel offset (False).
    """

    def __init__(self, spec: NetworkSpec, cached: bool = True):
        if not spec.has_params:
            spec = init_params(spec, np.random.default_rng(0))
        self.spec = spec
        self.cached = cached
        self.arrays = {
            layer.name: {key: payload.to_array() for key, payload in layer.params.items()}
            for layer in spec.layers
        }

    def _conv(self, counter: FlopCounter, layer: LayerSpec, x: np.ndarray, dac: bool) -> np.ndarray:
        arrays = self.arrays[layer.name]
        kernel = arrays["kernel"]
        size, _, n, m = kernel.shape
        plan = ops.ConvPlan((1,) + x.shape, size, layer.stride, layer.padding)
        rows_pad = (plan.top, plan.bottom)
        cols_pad = (plan.left, plan.right)

        if dac:
            biases = arrays["dac_biases"]
            if self.cached:
                inner = np.maximum(counter.add(x[:, :, None, :], biases), 0)
                # padded cells hold the constant relu(b_ij)
                plane = np.empty((x.shape[0] + sum(rows_pad), x.shape[1] + sum(cols_pad), n, m))
                plane[...] = np.maximum(biases, 0)
                plane[plan.top : plan.top + x.shape[0], plan.left : plan.left + x.shape[1]] = inner
            else:
                padded = np.pad(x, [rows_pad, cols_pad, (0, 0)])
        else:
            plane = np.pad(x, [rows_pad, cols_pad, (0, 0)])

        out = np.zeros((plan.out_h, plan.out_w, n))
        for a, b in plan.offsets():
            rows, cols = plan.window(a, b)
            if dac and not self.cached:
                window = np.maximum(counter.add(padded[rows, cols, None, :], biases), 0)
            elif dac:
                window = plane[rows, cols]
            else:
                window = plane[rows, cols, None, :]
            out += counter.accumulate(counter.mul(window, kernel[a, b]), axis=-1)
        bias = arrays.get("bias" if not dac else "out_bias")
        out = counter.add(out, bias if bias is not None else np.zeros(n))
        return out

    def _dense(self, counter: FlopCounter, layer: LayerSpec, x: np.ndarray) -> np.ndarray:
        arrays = self.arrays[layer.name]
        weights = arrays["weights"]
        n = weights.shape[0]
        if layer.kind == "dense_std":
            out = counter.accumulate(counter.mul(weights, x), axis=1)
            bias = arrays.get("bias")
        elif layer.kind == "dense_dac":
            activations = np.maximum(counter.add(x, arrays["dac_biases"]), 0)
            out = counter.accumulate(counter.mul(weights, activations), axis=1)
            bias = arrays.get("out_bias")
        else:
            sources = np.asarray(layer.sources, dtype=np.intp)
            real = weights != 0
            rows = np.nonzero(real)[0]
            activations = np.maximum(counter.add(x[sources[real]], arrays["dac_biases"][real]), 0)
            out = counter.scatter_accumulate(n, rows, counter.mul(weights[real], activations))
            bias = arrays.get("out_bias")
        out = counter.add(out, bias if bias is not None else np.zeros(n))
        return out

    def run(self, x: np.ndarray) -> Tuple[np.ndarray, List[int]]:
        """Forward one sample; returns the output and the FLOPs of every layer."""
        h = np.asarray(x, dtype=np.float64)
        stack: List[np.ndarray] = []
        counts: List[int] = []
        for layer in self.spec.layers:
            counter = FlopCounter()
            kind = layer.kind
            arrays = self.arrays[layer.name]
            if kind in ("dense_std", "dense_dac", "sparse_dac"):
                h = self._dense(counter, layer, h)
            elif kind in ("conv_std", "conv_dac"):
                h = self._conv(counter, layer, h, dac=kind == "conv_dac")
            elif kind == "batchnorm":
                # folded into one per-channel affine map: scale * y + offset
                scale = arrays["gamma"] / np.sqrt(arrays["running_var"] + layer.epsilon)
                offset = -arrays["running_mean"] * scale
                if "beta" in arrays:
                    offset = offset + arrays["beta"]
                h = counter.add(counter.mul(h, scale), offset)
            elif kind == "relu":
                h = np.maximum(h, 0)
            elif kind == "bias":
                h = counter.add(h, arrays["bias"])
            elif kind == "gap":
                spatial = h.shape[0] * h.shape[1]
                h = counter.mul(counter.accumulate(h, axis=(0, 1)), 1.0 / spatial)
            elif kind == "residual_begin":
                stack.append(h)
            elif kind == "residual_end":
                saved = stack.pop()
                stride, before, after = shortcut_geometry(saved.shape, h.shape)
                if saved.ndim == 3:
                    saved = saved[::stride, ::stride]
                saved = np.pad(saved, [(0, 0)] * (saved.ndim - 1) + [(before, after)])
                h = counter.add(h, saved)
            else:  # pragma: no cover - LayerKind is a closed Literal
                raise SpecError(f"Unknown layer kind '{kind}'")
            counts.append(counter.total)
        return h, counts


# --- reports ---


def _layer_formula(layer: LayerSpec, traced: TracedLayer, params: Dict[str, np.ndarray]) -> Tuple[int, int]:
    kind = layer.kind
    if kind in ("dense_std", "dense_dac"):
        flavor = "std" if kind == "dense_std" else "dac"
        m, n = traced.input_shape[0], traced.output_shape[0]
        return flops_dense(flavor, m, n), weights_dense(flavor, m, n)
    if kind == "sparse_dac":
        edges = int(np.count_nonzero(params["weights"]))
        n = traced.output_shape[0]
        return flops_sparse(edges, n), weights_sparse(edges, n)
    flavor = "std" if kind == "conv_std" else "dac"
    in_s, in_t, m = traced.input_shape
    s, t, n = traced.output_shape
    L = layer.kernel_size
    return flops_conv(flavor, L, m, n, s, t, in_s, in_t), weights_conv(flavor, L, m, n)


def _layer_weights(layer: LayerSpec, traced: TracedLayer, params: Dict[str, np.ndarray]) -> int:
    total = 0
    for key, shape in expected_params(layer, traced.input_shape).items():
        if ROLES[key] == "statistic":
            continue
        if layer.kind == "sparse_dac" and key in ("weights", "dac_biases"):
            total += int(np.count_nonzero(params["weights"]))
        else:
            total += int(np.prod(shape))
    return total


def model_report(
    spec: NetworkSpec, input_shape: Optional[Sequence[int]] = None, cached: bool = True
) -> ComplexityReport:
    """Formula and instrumented FLOPs plus weights, per layer and in total.

    Args:
        spec: Network to analyze (parameters are optional).
        input_shape: Per-sample input shape; defaults to the spec's own.
        cached: DAC conv activation caching in the instrumented pass.

    Raises:
        ShapeError: If the network does not fit the input shape.
    """
    shape = tuple(input_shape if input_shape is not None else spec.input_shape)
    traced = trace_shapes(spec, shape)
    interpreter = InstrumentedInterpreter(spec, cached=cached)
    x = np.random.default_rng(0).normal(size=shape)
    _, counts = interpreter.run(x)

    entries = []
    for layer, trace, flops in zip(interpreter.spec.layers, traced, counts):
        params = interpreter.arrays[layer.name]
        covered = layer.kind in COVERED_KINDS
        formula, weights_formula = _layer_formula(layer, trace, params) if covered else (None, None)
        entries.append(
            ComplexityEntry(
                name=layer.name,
                kind=layer.kind,
                output_shape=list(trace.output_shape),
                covered=covered,
                flops_formula=formula,
                flops_instrumented=flops,
                weights=_layer_weights(layer, trace, params),
                weights_formula=weights_formula,
            )
        )

    covered_entries = [e for e in entries if e.covered]
    totals = ComplexityTotals(
        flops_formula=sum(e.flops_formula for e in covered_entries),
        flops_instrumented=sum(e.flops_instrumented for e in covered_entries),
        flops_uncovered=sum(e.flops_instrumented for e in entries if not e.covered),
        weights=sum(e.weights for e in entries),
        weights_formula=sum(e.weights_formula for e in covered_entries),
    )
    return ComplexityReport(model=spec.name, input_shape=list(shape), entries=entries, totals=totals)


def total_flops(report: ComplexityReport) -> int:
    """Instrumented FLOPs of the whole network, covered and uncovered."""
    return report.totals.flops_instrumented + report.totals.flops_uncovered


def compare_reports(standard: ComplexityReport, dac: ComplexityReport) -> ComplexityReport:
    """DAC report annotated with DAC/std ratios of total FLOPs and weights."""
    ratios = {
        "flops": total_flops(dac) / total_flops(standard),
        "flops_formula": dac.totals.flops_formula / standard.totals.flops_formula,
        "weights": dac.totals.weights / standard.totals.weights,
    }
    return dac.model_copy(update={"dac_overhead_ratios": ratios})


def run_flops(
    spec: NetworkSpec,
    input_shape: Optional[Sequence[int]] = None,
    baseline: Optional[NetworkSpec] = None,
) -> ComplexityReport:
    """Report for ``spec``, compared against ``baseline`` when one is given."""
    started = time.time()
    logger.info("=" * 80)
    logger.info(f"🚀 COMPLEXITY: model={spec.name}, input={input_shape or spec.input_shape}")
    report = model_report(spec, input_shape)
    if baseline is not None:
        report = compare_reports(model_report(baseline, input_shape), report)
        logger.info(f"📊 DAC/std ratios: {report.dac_overhead_ratios}")
    logger.info(
        f"✅ {report.totals.flops_instrumented + report.totals.flops_uncovered} FLOPs, "
        f"{report.totals.weights} weights in {time.time() - started:.2f}s"
    )
    return report
