"""Constructive approximation of continuous functions by DAC networks.

The building block is the spike psi_d(x) = (1 - ||x||_1)^+. Its rescaled,
normalized version psi_{d,delta}(x) = C_d delta^-d psi_d(x / delta) has unit
integral, so the Riemann sum

    g(x) = sum_c (2^d / k) f(c) psi_{d,delta}(x - c)

over the centers c of a uniform partition of [-1, 1]^d approximates f.
Every term is realized by a chain of 4-input DAC units, and the k chains
share their pass-through units, which gives layer widths 2k + d - l.

Near the boundary the spike window leaves the cube. The search and the
CLI therefore contract the input by default: the network approximates
F(y) = f(clamp(y / r)) at y = r x with r = 1 - delta, so every window
used on [-1, 1]^d stays inside the partitioned cube. ``approx_nd`` alone
emits the plain construction unless a contraction is passed.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import (
    CERTIFICATE_GRID,
    MAX_DELTA,
    MAX_SPACING_RATIO,
    MESH_CAPS,
    MIN_DELTA_EXPONENT,
    MODULUS_GRID,
)
from engine.executor import NetworkRunner
from engine.layers import DenseDacParams
from models.network import LayerSpec, NetworkSpec, TensorPayload
from models.reports import ApproxCertificate
from models.settings import ApproxPlan, SpikeConfig
from tools.targets import uniform_grid
from utils.errors import ContractError, ParameterSearchError, SpecError
from utils.logger import get_logger

logger = get_logger(__name__)

TargetFn = Callable[[np.ndarray], np.ndarray]


# --- spikes ---


def spike_1d(x):
    """(1 - |x|)^+."""
    return np.maximum(1.0 - np.abs(x), 0.0)


def spike_nd(x):
    """(1 - ||x||_1)^+ along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(1.0 - np.abs(x).sum(axis=-1), 0.0)


def normalization_const(d: int) -> float:
    """C_d = 2^-d (d + 1)!, the inverse of the integral of psi_d."""
    if d < 1:
        raise ContractError(f"dimension must be >= 1, got {d}")
    return 2.0**-d * math.factorial(d + 1)


def _check_delta(delta: float) -> None:
    if not (delta > 0 and math.isfinite(delta)):
        raise ContractError(f"delta must be a positive finite number, got {delta}")


def spike_1d_as_dac(delta: float) -> DenseDacParams:
    """psi_{1,delta} as one DAC unit over the input replicated 3 times."""
    _check_delta(delta)
    return DenseDacParams(
        weights=np.array([[1.0, -2.0, 1.0]]) / delta**2,
        dac_biases=np.array([[-delta, 0.0, delta]]),
    )


def approx_1d(f: Union[TargetFn, Sequence[float]], delta: float, k: int) -> DenseDacParams:
    """One DAC unit over the input replicated 3k times.

    Term j contributes w_j relu(-t_j - delta + x) - 2 w_j relu(-t_j + x)
    + w_j relu(-t_j + delta + x) with t_j = (2j - 1)/k - 1 and
    w_j = (2/k) f(t_j) delta^-2. ``f`` is a vectorized target or the k
    sampled values themselves.
    """
    _check_delta(delta)
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    t = (2.0 * np.arange(1, k + 1) - 1.0) / k - 1.0
    if callable(f):
        values = np.asarray(f(t.reshape(-1, 1)), dtype=np.float64).reshape(k)
    else:
        values = np.asarray(f, dtype=np.float64).reshape(-1)
        if values.shape != (k,):
            raise ContractError(f"expected {k} sampled values, got {values.shape[0]}")
    w = (2.0 / k) * values / delta**2
    weights = np.stack([w, -2.0 * w, w], axis=1).reshape(1, 3 * k)
    biases = np.stack([-t - delta, -t, -t + delta], axis=1).reshape(1, 3 * k)
    return DenseDacParams(weights=weights, dac_biases=biases)


# --- sparse layer assembly ---


Edge = Tuple[int, float, float]  # (source, weight, dac_bias)


@dataclass
class _LayerTable:
    in_features: int
    units: List[List[Edge]] = field(default_factory=list)

    def add(self, edges: Sequence[Edge]) -> None:
        self.units.append(list(edges))

    def to_layer(self, name: str) -> LayerSpec:
        n = len(self.units)
        width = max(len(edges) for edges in self.units)
        sources = np.zeros((n, width), dtype=np.int64)
        weights = np.zeros((n, width))
        biases = np.zeros((n, width))
        for i, edges in enumerate(self.units):
            for f, (source, weight, bias) in enumerate(edges):
                sources[i, f] = source
                weights[i, f] = weight
                biases[i, f] = bias
        return LayerSpec(
            kind="sparse_dac",
            name=name,
            in_features=self.in_features,
            out_features=n,
            sources=sources.tolist(),
            params={
                "weights": TensorPayload.from_array(weights),
                "dac_biases": TensorPayload.from_array(biases),
            },
        )


def _spike_sum_tables(
    d: int, centers: np.ndarray, scales: np.ndarray, margin: float
) -> List[_LayerTable]:
    """Layers computing sum_c scales[c] * psi_d(u - centers[c]) from u.

    Layer 1 emits U(+-) = margin + u_2 +- psi_1(u_1 - c_1) per center plus
    pass-through units margin + u_j; layer i turns U(+-) into
    margin + u_{i+1} +- psi_i(...) through
    relu(-margin - c_i + U-) - 2 relu(-margin - c_i + P_i) + relu(-margin - c_i + U+),
    and the last layer sums those brackets with the given scales.
    ``margin`` must bound |u_j| so that every pass-through stays positive.
    """
    k = len(centers)
    if d == 1:
        last = _LayerTable(in_features=1)
        edges: List[Edge] = []
        for c, scale in zip(centers[:, 0], scales):
            edges += [(0, scale, -c - 1.0), (0, -2.0 * scale, -c), (0, scale, -c + 1.0)]
        last.add(edges)
        return [last]

    tables = []
    first = _LayerTable(in_features=d)
    for center in centers:
        c = center[0]
        for sign in (1.0, -1.0):
            first.add(
                [(1, 1.0, margin), (0, sign, -c - 1.0), (0, -2.0 * sign, -c), (0, sign, -c + 1.0)]
            )
    for j in range(1, d):
        first.add([(j, 1.0, margin)])
    tables.append(first)

    for i in range(2, d):
        # inputs: U+ of center c at 2c, U- at 2c + 1, then P_i..P_d
        def pass_through(j: int) -> int:
            return 2 * k + (j - i)

        table = _LayerTable(in_features=2 * k + d - i + 1)
        for c, center in enumerate(centers):
            shift = -margin - center[i - 1]
            for sign in (1.0, -1.0):
                table.add(
                    [
                        (pass_through(i + 1), 1.0, 0.0),
                        (2 * c + 1, sign, shift),
                        (pass_through(i), -2.0 * sign, shift),
                        (2 * c, sign, shift),
                    ]
                )
        for j in range(i + 1, d + 1):
            table.add([(pass_through(j), 1.0, 0.0)])
        tables.append(table)

    last = _LayerTable(in_features=2 * k + 1)
    edges = []
    for c, (center, scale) in enumerate(zip(centers, scales)):
        shift = -margin - center[d - 1]
        edges += [(2 * c + 1, scale, shift), (2 * k, -2.0 * scale, shift), (2 * c, scale, shift)]
    last.add(edges)
    tables.append(last)
    return tables


def _assemble(tables: List[_LayerTable], d: int, name: str, prefix: str, meta: dict) -> NetworkSpec:
    layers = [table.to_layer(f"{prefix}{i + 1}") for i, table in enumerate(tables)]
    return NetworkSpec(name=name, input_shape=[d], meta=meta, layers=layers)


def rescale_input(spec: NetworkSpec, scale: float) -> NetworkSpec:
    """Network computing h(scale * x) when ``spec`` computes h(x).

    Uses relu(b + scale * x) = scale * relu(b / scale + x) on the first
    layer: its weights are multiplied by ``scale`` and its DAC biases divided.

    Raises:
        ContractError: If ``scale`` is not positive.
        SpecError: If the first layer is not a DAC layer.
    """
    if not scale > 0:
        raise ContractError(f"rescaling factor must be positive, got {scale}")
    if not spec.layers or spec.layers[0].kind not in ("dense_dac", "sparse_dac"):
        raise SpecError("input rescaling needs a DAC first layer")
    first = spec.layers[0]
    params = dict(first.params)
    params["weights"] = TensorPayload.from_array(first.param_array("weights") * scale)
    params["dac_biases"] = TensorPayload.from_array(first.param_array("dac_biases") / scale)
    layers = [first.model_copy(update={"params": params})] + list(spec.layers[1:])
    return spec.model_copy(update={"layers": layers})


# --- spike networks ---


def spike_nd_deep_network(
    d: int,
    c: Optional[Sequence[float]] = None,
    delta: float = 1.0,
    normalize: bool = True,
    radius: float = 1.0,
) -> NetworkSpec:
    """d-layer DAC network computing psi_{d,delta}(x - c).

    With ``normalize=False`` the factor C_d delta^-d is left out and the
    network computes psi_d((x - c) / delta). ``radius`` bounds |x_j| on the
    intended input domain.
    """
    config = SpikeConfig(d=d, delta=delta, shift=list(c) if c is not None else [])
    scale = 1.0 / config.delta
    factor = normalization_const(d) * config.delta**-d if normalize else 1.0
    centers = np.asarray([config.shift]) * scale
    tables = _spike_sum_tables(d, centers, np.array([factor]), margin=max(1.0, scale * radius))
    meta = {"family": "spike", "d": d, "delta": config.delta, "shift": config.shift, "normalized": normalize}
    spec = _assemble(tables, d, f"spike-{d}d", "spike", meta)
    return rescale_input(spec, scale)


def spike_nd_shallow_network(d: int) -> NetworkSpec:
    """Two-layer form psi_d(x) = relu(1 - d + sum_j [relu(x_j + 1) - 2 relu(x_j)])."""
    if d < 1:
        raise ContractError(f"dimension must be >= 1, got {d}")
    first = _LayerTable(in_features=d)
    first.add([edge for j in range(d) for edge in ((j, 1.0, 1.0), (j, -2.0, 0.0))])
    second = _LayerTable(in_features=1)
    second.add([(0, 1.0, 1.0 - d)])
    return _assemble([first, second], d, f"spike-shallow-{d}d", "shallow", {"family": "spike_shallow", "d": d})


# --- Riemann-sum approximants ---


def default_shrink(delta: float) -> float:
    """Input contraction r = 1 - delta; spikes wider than MAX_DELTA get no contraction."""
    return 1.0 - delta if delta <= MAX_DELTA else 1.0


def shrink_for(delta: float, contract: bool) -> float:
    return default_shrink(delta) if contract else 1.0


def partition_axis(mesh: int) -> np.ndarray:
    """Cell midpoints of the uniform partition of [-1, 1] into ``mesh`` cells."""
    h = 2.0 / mesh
    return -1.0 + h * (np.arange(mesh) + 0.5)


def build_plan(f: TargetFn, d: int, delta: float, mesh: int, shrink: float = 1.0) -> ApproxPlan:
    """Sample F(c) = f(clamp(c / shrink)) at the k = mesh^d cell centers.

    With the default ``shrink=1`` this is the plain construction with
    weights 2^d k^-1 f(c).
    """
    _check_delta(delta)
    if mesh < 1:
        raise ContractError(f"mesh must be >= 1, got {mesh}")
    axis = partition_axis(mesh)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    values = f(np.clip(centers / shrink, -1.0, 1.0))
    return ApproxPlan(
        d=d,
        mesh=mesh,
        delta=delta,
        shrink=shrink,
        centers=centers.tolist(),
        values=np.asarray(values, dtype=np.float64).reshape(-1).tolist(),
    )


def network_from_plan(plan: ApproxPlan, function: str = "f") -> NetworkSpec:
    """Emit the DAC network of a plan; its input is x in [-1, 1]^d (contraction included)."""
    d = plan.d
    weights = plan.cell_volume * plan.values_array()
    scales = weights * normalization_const(d) * plan.delta**-d
    scale = plan.shrink / plan.delta
    tables = _spike_sum_tables(
        d, plan.centers_array() / plan.delta, scales, margin=max(1.0, scale)
    )
    meta = {
        "family": "approx",
        "function": function,
        "d": d,
        "delta": plan.delta,
        "mesh": plan.mesh,
        "k": plan.k,
        "shrink": plan.shrink,
    }
    spec = _assemble(tables, d, f"approx-{function}-{d}d", "approx", meta)
    return rescale_input(spec, scale)


def approx_nd(
    f: TargetFn,
    d: int,
    delta: float,
    mesh: int,
    shrink: float = 1.0,
    function: str = "f",
) -> NetworkSpec:
    """DAC network approximating ``f`` on [-1, 1]^d with k = mesh^d spikes.

    ``shrink`` < 1 samples f(clamp(c / shrink)) and feeds the contracted
    input shrink * x, which keeps every spike window inside the cube.
    """
    return network_from_plan(build_plan(f, d, delta, mesh, shrink), function)


def riemann_sum(plan: ApproxPlan, y: np.ndarray) -> np.ndarray:
    """Closed-form sum_c w_c psi_{d,delta}(y - c) at plan coordinates ``y``.

    Only centers within delta of a point along every axis can contribute,
    so each point visits a (2N + 2)^d stencil of neighbors, N = ceil(delta / h).
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    d, mesh, delta = plan.d, plan.mesh, plan.delta
    h = 2.0 / mesh
    reach = int(math.ceil(delta / h))
    grid_values = plan.values_array().reshape((mesh,) * d)
    base = np.floor((y + 1.0) / h - 0.5).astype(np.int64)

    total = np.zeros(len(y))
    for offset in itertools.product(range(-reach, reach + 2), repeat=d):
        index = base + np.asarray(offset)
        valid = np.all((index >= 0) & (index < mesh), axis=1)
        if not valid.any():
            continue
        inside = index[valid]
        centers = -1.0 + h * (inside + 0.5)
        total[valid] += grid_values[tuple(inside.T)] * spike_nd((y[valid] - centers) / delta)
    return total * plan.cell_volume * normalization_const(d) * delta**-d


# --- parameter selection ---


def certificate_grid(d: int) -> int:
    return CERTIFICATE_GRID.get(d, 11)


def modulus_of_continuity(f: TargetFn, d: int, t: float) -> float:
    """Largest |f(p) - f(q)| over grid points p and q = clamp(p + v), ||v||_1 = t.

    Offsets v run along the axes and along the diagonals.
    """
    if d not in MODULUS_GRID:
        raise ContractError(f"modulus estimation supports d in {sorted(MODULUS_GRID)}, got {d}")
    points = uniform_grid(d, MODULUS_GRID[d])
    base = f(points)
    directions = set()
    for j in range(d):
        for sign in (1.0, -1.0):
            axis = [0.0] * d
            axis[j] = sign
            directions.add(tuple(axis))
    for signs in itertools.product((1.0, -1.0), repeat=d):
        directions.add(tuple(s / d for s in signs))

    worst = 0.0
    for direction in sorted(directions):
        moved = np.clip(points + t * np.asarray(direction), -1.0, 1.0)
        worst = max(worst, float(np.max(np.abs(f(moved) - base))))
    return worst


def plan_error(f: TargetFn, plan: ApproxPlan, grid_points: Optional[int] = None) -> float:
    """Sup |f(x) - g(shrink * x)| on the uniform certificate grid, g in closed form."""
    x = uniform_grid(plan.d, grid_points or certificate_grid(plan.d))
    return float(np.max(np.abs(f(x) - riemann_sum(plan, plan.shrink * x))))


@dataclass
class SearchResult:
    delta: float
    mesh: int
    error: float
    phase: str
    shrink: float = 1.0
    tried: List[Tuple[float, int, float]] = field(default_factory=list)


def search_params(f: TargetFn, d: int, eps: float, contract: bool = True) -> SearchResult:
    """Choose (delta, mesh) so that the emitted network is within ``eps`` of ``f``.

    A delta is admissible when the estimated modulus of continuity satisfies
    omega(delta * d / r) < eps / 2, r being the input contraction (1 without
    ``contract``). Phase one takes the largest admissible dyadic delta and
    doubles the mesh from 1 up to the cap. If no mesh passes, phase two scans
    meshes upwards with delta an integer multiple (2..MAX_SPACING_RATIO) of
    the cell size, skipping inadmissible deltas. A candidate passes when its
    Riemann-sum error on the certificate grid is below eps / 2.

    Raises:
        ContractError: If ``eps`` is not positive or d has no mesh cap.
        ParameterSearchError: If no candidate passes within the caps.
    """
    if not eps > 0:
        raise ContractError(f"epsilon must be positive, got {eps}")
    if d not in MESH_CAPS:
        raise ContractError(f"parameter search supports d in {sorted(MESH_CAPS)}, got {d}")
    cap = MESH_CAPS[d]
    threshold = eps / 2
    tried: List[Tuple[float, int, float]] = []
    admissible_cache: Dict[float, bool] = {}

    def admissible(delta: float) -> bool:
        if delta not in admissible_cache:
            reach = delta * d / shrink_for(delta, contract)
            admissible_cache[delta] = modulus_of_continuity(f, d, reach) < threshold
        return admissible_cache[delta]

    def attempt(delta: float, mesh: int) -> Optional[SearchResult]:
        shrink = shrink_for(delta, contract)
        error = plan_error(f, build_plan(f, d, delta, mesh, shrink))
        tried.append((delta, mesh, error))
        logger.debug(f"delta={delta:.6g} mesh={mesh} error={error:.4e}")
        return SearchResult(delta, mesh, error, "", shrink, tried) if error < threshold else None

    safe_delta = next(
        (2.0**-e for e in range(1, MIN_DELTA_EXPONENT + 1) if admissible(2.0**-e)),
        None,
    )
    if safe_delta is not None:
        mesh = 1
        while mesh <= cap:
            result = attempt(safe_delta, mesh)
            if result is not None:
                result.phase = "modulus"
                return result
            mesh *= 2

    mesh = 2
    while mesh <= cap:
        for ratio in range(2, MAX_SPACING_RATIO + 1):
            delta = ratio * 2.0 / mesh
            if delta > MAX_DELTA:
                break
            if not admissible(delta):
                continue
            result = attempt(delta, mesh)
            if result is not None:
                result.phase = "spacing"
                return result
        mesh *= 2

    best = min(tried, key=lambda item: item[2]) if tried else None
    diagnostic = {
        "d": d,
        "epsilon": eps,
        "threshold": threshold,
        "mesh_cap": cap,
        "modulus_delta": safe_delta,
        "candidates": len(tried),
        "best": None if best is None else {"delta": best[0], "mesh": best[1], "error": best[2]},
    }
    logger.error(f"❌ Parameter search failed: {diagnostic}")
    raise ParameterSearchError(
        f"no (delta, mesh) within the d={d} cap of {cap} cells per axis reaches error < {threshold}",
        diagnostic,
    )


def select_params(f: TargetFn, d: int, eps: float) -> Tuple[float, int]:
    """(delta, mesh) of the first passing candidate; see :func:`search_params`."""
    result = search_params(f, d, eps)
    return result.delta, result.mesh


# --- evaluation and certificates ---


def sup_error(net: NetworkSpec, f: TargetFn, grid: int, threads: int = 1) -> float:
    """max |f - net| over the uniform grid on [-1, 1]^d including endpoints."""
    if grid < 2:
        raise ContractError(f"grid needs at least 2 points per axis, got {grid}")
    d = net.input_shape[0]
    x = uniform_grid(d, grid)
    predicted = NetworkRunner(net).predict(x, threads=threads)[:, 0]
    return float(np.max(np.abs(f(x) - predicted)))


def layer_widths(net: NetworkSpec) -> List[int]:
    return [layer.out_features for layer in net.layers if layer.out_features is not None]


def max_fan_in(net: NetworkSpec) -> List[int]:
    """Largest number of non-zero input edges of a unit, per layer."""
    fan_in = []
    for layer in net.layers:
        weights = layer.param_array("weights")
        if weights is None:
            continue
        fan_in.append(int(np.count_nonzero(weights, axis=-1).max(initial=0)))
    return fan_in


def certify(
    net: NetworkSpec,
    f: TargetFn,
    function: str,
    eps: Optional[float] = None,
    grid: Optional[int] = None,
    threads: int = 1,
) -> ApproxCertificate:
    """Measure an emitted network on the certificate grid."""
    d = net.input_shape[0]
    points = grid or certificate_grid(d)
    error = sup_error(net, f, points, threads=threads)
    return ApproxCertificate(
        function=function,
        d=d,
        delta=float(net.meta.get("delta", 0.0)),
        mesh=int(net.meta.get("mesh", 0)),
        k=int(net.meta.get("k", 0)),
        shrink=float(net.meta.get("shrink", 1.0)),
        layer_widths=layer_widths(net),
        max_fan_in=max_fan_in(net),
        sup_error=error,
        grid_points=points,
        epsilon=eps,
        passed=None if eps is None else error < eps,
    )


def run_approximation(
    f: TargetFn,
    function: str,
    d: int,
    eps: Optional[float] = None,
    delta: Optional[float] = None,
    mesh: Optional[int] = None,
    threads: int = 1,
    contract: bool = True,
) -> Tuple[NetworkSpec, ApproxCertificate]:
    """Select parameters (unless both are given), emit the network and certify it.

    With ``contract`` the network runs on the contracted input (1 - delta) x;
    without it the plain construction is emitted.
    """
    started = time.time()
    logger.info("=" * 80)
    logger.info(f"🚀 APPROXIMATION: function={function}, d={d}, eps={eps}, contract={contract}")

    if delta is None or mesh is None:
        if eps is None:
            raise ContractError("either epsilon or both delta and mesh are required")
        result = search_params(f, d, eps, contract=contract)
        delta, mesh = result.delta, result.mesh
        logger.info(
            f"📊 Selected delta={delta:.6g}, mesh={mesh} ({result.phase} phase, "
            f"{len(result.tried)} candidates, closed-form error {result.error:.4e})"
        )

    net = approx_nd(f, d, delta, mesh, shrink=shrink_for(delta, contract), function=function)
    certificate = certify(net, f, function, eps=eps, threads=threads)
    marker = "✅" if certificate.passed is not False else "❌"
    logger.info(
        f"{marker} Emitted widths {certificate.layer_widths}, sup error {certificate.sup_error:.4e} "
        f"in {time.time() - started:.2f}s"
    )
    return net, certificate
