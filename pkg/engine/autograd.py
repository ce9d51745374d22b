"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Graph` is an append-only list of nodes. Each node stores the
operation name, the ids of its inputs, its (read-only) output array and a
vector-Jacobian product closure. Because inputs are always recorded before
the nodes that consume them, reverse list order is a valid reverse
topological order and :func:`backward` is a single sweep over the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ContractError

VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

PRECISIONS = {"f64": np.float64, "f32": np.float32}


@dataclass(frozen=True)
class Node:
    """One recorded operation."""

    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    vjp: Optional[VJP]
    trainable: bool = False
    name: Optional[str] = None


def _freeze(array: np.ndarray) -> np.ndarray:
    if array.flags.writeable:
        array.setflags(write=False)
    return array


class Graph:
    """Append-only operation tape.

    Args:
        precision: ``"f64"`` (default) or ``"f32"``; applies to every leaf
            created through this graph.
    """

    def __init__(self, precision: str = "f64"):
        if precision not in PRECISIONS:
            raise ContractError(
                f"Unknown precision '{precision}'. Available: {list(PRECISIONS)}"
            )
        self.precision = precision
        self.dtype = PRECISIONS[precision]
        self.nodes: List[Node] = []
        self._nonfinite: List[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # --- leaves ---

    def _leaf(self, value, name: Optional[str], trainable: bool) -> "Var":
        array = np.array(value, dtype=self.dtype, copy=True)
        return self._append(Node("leaf", (), _freeze(array), None, trainable, name))

    def constant(self, value, name: Optional[str] = None) -> "Var":
        """Record a non-trainable leaf (inputs, frozen statistics)."""
        return self._leaf(value, name, trainable=False)

    def parameter(self, value, name: Optional[str] = None) -> "Var":
        """Record a trainable leaf; :func:`backward` always returns its gradient."""
        return self._leaf(value, name, trainable=True)

    # --- operations ---

    def record(
        self,
        op: str,
        inputs: Sequence["Var"],
        value: np.ndarray,
        vjp: Optional[VJP],
    ) -> "Var":
        """Append the result of an operation on ``inputs``."""
        for var in inputs:
            if var.graph is not self:
                raise ContractError(f"Operation '{op}' mixes nodes of different graphs")
        node = Node(op, tuple(v.id for v in inputs), _freeze(np.asarray(value)), vjp)
        return self._append(node)

    def _append(self, node: Node) -> "Var":
        self.nodes.append(node)
        index = len(self.nodes) - 1
        if node.value.dtype.kind == "f" and not np.isfinite(node.value).all():
            self._nonfinite.append(index)
        return Var(self, index)

    # --- inspection ---

    @property
    def has_nonfinite(self) -> bool:
        """True once any recorded value contains NaN or Inf."""
        return bool(self._nonfinite)

    @property
    def nonfinite_nodes(self) -> List[int]:
        return list(self._nonfinite)

    @property
    def parameters(self) -> List["Var"]:
        return [Var(self, i) for i, node in enumerate(self.nodes) if node.trainable]

    def as_var(self, value) -> "Var":
        """Return ``value`` as a node of this graph, recording a constant if needed."""
        if isinstance(value, Var):
            if value.graph is not self:
                raise ContractError("Var belongs to a different graph")
            return value
        return self.constant(value)


class Var:
    """Handle to a graph node with arithmetic operator overloads."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.graph.nodes[self.id]

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def name(self) -> Optional[str]:
        return self.node.name

    def __repr__(self) -> str:
        return f"Var(id={self.id}, op={self.node.op}, shape={self.shape})"

    def __add__(self, other):
        from engine import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from engine import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from engine import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from engine import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from engine import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from engine import ops

        return ops.matmul(self, other)

    def sum(self, axis=None):
        from engine import ops

        return ops.sum(self, axis=axis)

    def mean(self, axis=None):
        from engine import ops

        return ops.mean(self, axis=axis)

    def relu(self):
        from engine import ops

        return ops.relu(self)


def backward(
    graph: Graph,
    loss: Union[Var, int],
    wrt: Sequence[Var] = (),
) -> Dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Args:
        graph: Tape holding the loss.
        loss: Scalar node (``Var`` or node id).
        wrt: Extra non-parameter nodes whose gradients should be returned.

    Returns:
        Mapping node id -> gradient. Contains every trainable node of the
        graph (zeros when the loss does not depend on it) plus ``wrt``.

    Raises:
        ContractError: If the loss is not a scalar.
    """
    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    loss_value = graph.nodes[loss_id].value
    if loss_value.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, got shape {loss_value.shape}"
        )

    grads: Dict[int, np.ndarray] = {loss_id: np.ones_like(loss_value)}
    for index in range(loss_id, -1, -1):
        grad = grads.get(index)
        node = graph.nodes[index]
        if grad is None or node.vjp is None:
            continue
        input_grads = node.vjp(grad)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_grad is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad

    wanted = {i for i, node in enumerate(graph.nodes) if node.trainable}
    wanted.update(var.id for var in wrt)
    result: Dict[int, np.ndarray] = {}
    for node_id in sorted(wanted):
        value = graph.nodes[node_id].value
        grad = grads.get(node_id)
        result[node_id] = np.zeros_like(value) if grad is None else grad
    return result


def grad_check(
    f: Callable[[Var], Var], x: np.ndarray, h: float = 1e-6
) -> float:
    """Compare the analytic gradient of ``f`` at ``x`` with central differences.

    ``f`` receives ``x`` as a parameter node and builds a scalar on the same
    graph (any other tensors it needs are recorded as constants there).

    Returns:
        max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-12).

    Raises:
        ContractError: If ``h`` is not positive.
    """
    if h <= 0:
        raise ContractError(f"Finite-difference step must be positive, got {h}")

    base = np.array(x, dtype=np.float64, copy=True)

    graph = Graph("f64")
    x_var = graph.parameter(base, name="x")
    analytic = backward(graph, f(x_var))[x_var.id]

    def evaluate(point: np.ndarray) -> float:
        scratch = Graph("f64")
        return float(f(scratch.parameter(point, name="x")).value)

    numeric = np.empty_like(base)
    for i in range(base.size):
        shifted = base.copy()
        shifted.flat[i] = base.flat[i] + h
        upper = evaluate(shifted)
        shifted.flat[i] = base.flat[i] - h
        lower = evaluate(shifted)
        numeric.flat[i] = (upper - lower) / (2 * h)

    if base.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
