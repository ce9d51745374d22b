"""Differentiable primitives.

Every function takes :class:`~engine.autograd.Var` handles (numpy arrays and
Python scalars are recorded as constants on the graph of the first ``Var``
argument), computes its output with numpy and records a vector-Jacobian
product closure. Conv tensors are laid out batch x height x width x channel;
kernels are ``L x L x n x m`` (n output kernels, m input channels).
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from engine.autograd import Graph, Var
from utils.errors import ContractError, ShapeError


def _graph_of(items: Sequence) -> Graph:
    for item in items:
        if isinstance(item, Var):
            return item.graph
    raise ContractError("At least one operand must be a graph node")


def _as_vars(*items) -> Tuple[Var, ...]:
    graph = _graph_of(items)
    return tuple(graph.as_var(item) for item in items)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Var, b: Var) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError.mismatch(op, a.shape, b.shape) from None


# --- elementwise ---


def add(a, b) -> Var:
    a, b = _as_vars(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return a.graph.record(
        "add",
        (a, b),
        a.value + b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Var:
    a, b = _as_vars(a, b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return a.graph.record(
        "sub",
        (a, b),
        a.value - b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Var:
    a, b = _as_vars(a, b)
    _broadcast_check("mul", a, b)
    av, bv = a.value, b.value
    return a.graph.record(
        "mul",
        (a, b),
        av * bv,
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def neg(a: Var) -> Var:
    return a.graph.record("neg", (a,), -a.value, lambda g: (-g,))


def relu(x: Var) -> Var:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.value > 0
    return x.graph.record(
        "relu", (x,), np.where(mask, x.value, 0).astype(x.value.dtype), lambda g: (g * mask,)
    )


# --- linear algebra and reductions ---


def matmul(a, b) -> Var:
    """2-D matrix product."""
    a, b = _as_vars(a, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError.mismatch("matmul", av.shape, bv.shape)
    return a.graph.record(
        "matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g)
    )


def transpose(x: Var) -> Var:
    if x.value.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {x.shape}")
    return x.graph.record("transpose", (x,), x.value.T, lambda g: (g.T,))


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def sum(x: Var, axis=None) -> Var:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    axes = _normalize_axes(axis, len(shape))

    def vjp(g):
        expanded = np.reshape(g, [1 if i in axes else s for i, s in enumerate(shape)])
        return (np.array(np.broadcast_to(expanded, shape)),)

    return x.graph.record("sum", (x,), np.sum(x.value, axis=axes), vjp)


def mean(x: Var, axis=None) -> Var:
    shape = x.shape
    axes = _normalize_axes(axis, len(shape))
    count = int(np.prod([shape[a] for a in axes])) if axes else 1

    def vjp(g):
        expanded = np.reshape(g, [1 if i in axes else s for i, s in enumerate(shape)])
        return (np.array(np.broadcast_to(expanded / count, shape)),)

    return x.graph.record("mean", (x,), np.mean(x.value, axis=axes), vjp)


def reshape(x: Var, shape: Sequence[int]) -> Var:
    original = x.shape
    try:
        value = np.reshape(x.value, shape)
    except ValueError:
        raise ShapeError.mismatch("reshape", original, tuple(shape)) from None
    return x.graph.record("reshape", (x,), value, lambda g: (np.reshape(g, original),))


# --- convolution ---


def conv_geometry(size: int, kernel: int, stride: int, padding: str) -> Tuple[int, int, int]:
    """Output extent and (low, high) zero padding along one spatial axis.

    ``same`` follows the usual convention: ``ceil(size / stride)`` outputs,
    total padding split with the extra row/column at the high end.
    """
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if size < kernel:
            raise ShapeError(
                f"conv: kernel {kernel}x{kernel} larger than padded input extent {size}"
            )
        return (size - kernel) // stride + 1, 0, 0
    raise ContractError(f"padding must be 'same' or 'valid', got '{padding}'")


def _check_kernel(kernel: np.ndarray, channels: int) -> Tuple[int, int]:
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv: kernel must be L x L x n x m, got {kernel.shape}")
    size = kernel.shape[0]
    if size % 2 == 0:
        raise ContractError(f"conv: kernel size must be odd, got {size}")
    if kernel.shape[3] != channels:
        raise ShapeError.mismatch("conv input channels vs kernel", (channels,), kernel.shape)
    return size, kernel.shape[2]


class ConvPlan:
    """Padding and window slices shared by the forward and backward passes."""

    def __init__(self, shape: Tuple[int, ...], size: int, stride: int, padding: str):
        _, self.height, self.width, _ = shape
        self.size = size
        self.stride = stride
        self.out_h, self.top, self.bottom = conv_geometry(self.height, size, stride, padding)
        self.out_w, self.left, self.right = conv_geometry(self.width, size, stride, padding)

    def pad(self, x: np.ndarray) -> np.ndarray:
        widths = [(0, 0), (self.top, self.bottom), (self.left, self.right)]
        widths += [(0, 0)] * (x.ndim - 3)
        return np.pad(x, widths)

    def crop(self, padded: np.ndarray) -> np.ndarray:
        return padded[:, self.top : self.top + self.height, self.left : self.left + self.width]

    def window(self, a: int, b: int) -> Tuple[slice, slice]:
        s = self.stride
        return (
            slice(a, a + s * (self.out_h - 1) + 1, s),
            slice(b, b + s * (self.out_w - 1) + 1, s),
        )

    def offsets(self):
        for a in range(self.size):
            for b in range(self.size):
                yield a, b


def _batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"conv: input must be (batch x) s x t x m, got {x.shape}")
    return x, False


def conv2d_raw(x, w, stride: int = 1, padding: str = "same") -> Var:
    """Cross-correlation summed over input channels.

    Args:
        x: Input of shape ``s x t x m`` or ``batch x s x t x m``.
        w: Kernel ``L x L x n x m`` with odd ``L``.
        stride: Spatial stride (>= 1).
        padding: ``"same"`` or ``"valid"`` zero padding.
    """
    x, w = _as_vars(x, w)
    xv, squeeze = _batched(x.value)
    wv = w.value
    size, n = _check_kernel(wv, xv.shape[3])
    plan = ConvPlan(xv.shape, size, stride, padding)
    xp = plan.pad(xv)

    out = np.zeros((xv.shape[0], plan.out_h, plan.out_w, n), dtype=np.result_type(xv, wv))
    for a, b in plan.offsets():
        rows, cols = plan.window(a, b)
        out += xp[:, rows, cols, :] @ wv[a, b].T

    def vjp(g):
        g4 = g[None] if squeeze else g
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(wv)
        for a, b in plan.offsets():
            rows, cols = plan.window(a, b)
            dw[a, b] = np.tensordot(g4, xp[:, rows, cols, :], axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, rows, cols, :] += g4 @ wv[a, b]
        dx = plan.crop(dxp)
        return (dx[0] if squeeze else dx, dw)

    return x.graph.record("conv2d", (x, w), out[0] if squeeze else out, vjp)


def conv2d_dac(
    x, w, dac_biases, stride: int = 1, padding: str = "same", cached: bool = True
) -> Var:
    """DAC convolution without output bias or output activation.

    out[h, k, i] = sum_{a, b, j} w[a, b, i, j] * relu(dac_biases[i, j] + x_pad[h+a, k+b, j])

    With ``cached=True`` the activation plane relu(b_ij + x_pad[..., j]) is
    computed once per (i, j) pair and sliced for every kernel offset;
    otherwise it is recomputed inside the kernel loop. Zero padding is
    applied before the activation, so padded cells contribute relu(b_ij).
    """
    x, w, dac_biases = _as_vars(x, w, dac_biases)
    xv, squeeze = _batched(x.value)
    wv, bv = w.value, dac_biases.value
    size, n = _check_kernel(wv, xv.shape[3])
    if bv.shape != (n, xv.shape[3]):
        raise ShapeError.mismatch("conv_dac biases vs (n, m)", bv.shape, (n, xv.shape[3]))
    plan = ConvPlan(xv.shape, size, stride, padding)
    xp = plan.pad(xv)

    def plane() -> np.ndarray:
        return np.maximum(xp[..., None, :] + bv, 0)

    activations = plane() if cached else None
    out = np.zeros((xv.shape[0], plan.out_h, plan.out_w, n), dtype=np.result_type(xv, wv))
    for a, b in plan.offsets():
        rows, cols = plan.window(a, b)
        if activations is not None:
            slab = activations[:, rows, cols]
        else:
            slab = np.maximum(xp[:, rows, cols, None, :] + bv, 0)
        out += np.einsum("bhkij,ij->bhki", slab, wv[a, b])

    def vjp(g):
        g4 = g[None] if squeeze else g
        full = activations if activations is not None else plane()
        d_plane = np.zeros_like(full)
        dw = np.zeros_like(wv)
        for a, b in plan.offsets():
            rows, cols = plan.window(a, b)
            dw[a, b] = np.einsum("bhki,bhkij->ij", g4, full[:, rows, cols])
            d_plane[:, rows, cols] += g4[..., None] * wv[a, b]
        d_pre = d_plane * (full > 0)
        dx = plan.crop(d_pre.sum(axis=3))
        return (dx[0] if squeeze else dx, dw, d_pre.sum(axis=(0, 1, 2)))

    return x.graph.record(
        "conv2d_dac", (x, w, dac_biases), out[0] if squeeze else out, vjp
    )


# --- DAC dense ---


def dac_aggregate(activations: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_j w_ij * a_ij along the last axis; shared by every dense DAC path."""
    return (activations * weights).sum(axis=-1)


def dense_dac(y, weights, dac_biases) -> Var:
    """out[b, i] = sum_j w[i, j] * relu(dac_biases[i, j] + y[b, j])."""
    y, weights, dac_biases = _as_vars(y, weights, dac_biases)
    yv, wv, bv = y.value, weights.value, dac_biases.value
    if wv.shape != bv.shape:
        raise ShapeError.mismatch("dense_dac weights vs dac_biases", wv.shape, bv.shape)
    if yv.ndim != 2 or yv.shape[1] != wv.shape[1]:
        raise ShapeError.mismatch("dense_dac input vs weights", yv.shape, wv.shape)

    activations = np.maximum(yv[:, None, :] + bv, 0)

    def vjp(g):
        d_pre = g[:, :, None] * wv * (activations > 0)
        return (
            d_pre.sum(axis=1),
            np.einsum("bi,bij->ij", g, activations),
            d_pre.sum(axis=0),
        )

    return y.graph.record(
        "dense_dac", (y, weights, dac_biases), dac_aggregate(activations, wv), vjp
    )


def sparse_dac(y, sources: np.ndarray, weights, dac_biases) -> Var:
    """DAC units over gathered inputs.

    Unit ``i`` has ``F`` edges; edge ``f`` reads ``y[:, sources[i, f]]`` and
    applies its own bias and weight. Padding edges carry weight 0.
    """
    y, weights, dac_biases = _as_vars(y, weights, dac_biases)
    yv, wv, bv = y.value, weights.value, dac_biases.value
    sources = np.asarray(sources, dtype=np.intp)
    if not (sources.shape == wv.shape == bv.shape):
        raise ShapeError.mismatch("sparse_dac tables", sources.shape, wv.shape)
    if yv.ndim != 2:
        raise ShapeError(f"sparse_dac: input must be batch x m, got {yv.shape}")
    if sources.size and (sources.min() < 0 or sources.max() >= yv.shape[1]):
        raise ShapeError(
            f"sparse_dac: source index out of range for input width {yv.shape[1]}"
        )

    activations = np.maximum(yv[:, sources] + bv, 0)

    def vjp(g):
        d_pre = g[:, :, None] * wv * (activations > 0)
        dy = np.zeros_like(yv)
        np.add.at(dy, (slice(None), sources.ravel()), d_pre.reshape(len(yv), -1))
        return (dy, np.einsum("bi,bif->if", g, activations), d_pre.sum(axis=0))

    return y.graph.record(
        "sparse_dac", (y, weights, dac_biases), dac_aggregate(activations, wv), vjp
    )


# --- normalization, pooling, shortcuts ---


def batchnorm(
    y: Var,
    gamma: Var,
    beta: Optional[Var],
    running_mean: np.ndarray,
    running_var: np.ndarray,
    epsilon: float,
    training: bool,
) -> Tuple[Var, np.ndarray, np.ndarray]:
    """Per-channel (last axis) batch normalization.

    Returns:
        The normalized output and the batch mean/variance (the running
        statistics in inference mode) for the caller's running update.
    """
    channels = y.shape[-1]
    if gamma.shape != (channels,) or (beta is not None and beta.shape != (channels,)):
        raise ShapeError.mismatch("batchnorm channels", y.shape, gamma.shape)
    axes = tuple(range(y.value.ndim - 1))
    yv, gv = y.value, gamma.value

    if training:
        mu = yv.mean(axis=axes)
        var = ((yv - mu) ** 2).mean(axis=axes)
    else:
        mu = np.asarray(running_mean, dtype=yv.dtype)
        var = np.asarray(running_var, dtype=yv.dtype)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = (yv - mu) * inv_std
    out = gv * x_hat
    if beta is not None:
        out = out + beta.value
    count = yv.size // channels

    def vjp(g):
        d_gamma = (g * x_hat).sum(axis=axes)
        d_xhat = g * gv
        if training:
            dy = (inv_std / count) * (
                count * d_xhat
                - d_xhat.sum(axis=axes)
                - x_hat * (d_xhat * x_hat).sum(axis=axes)
            )
        else:
            dy = d_xhat * inv_std
        grads = (dy, d_gamma)
        if beta is not None:
            grads = grads + (g.sum(axis=axes),)
        return grads

    inputs = (y, gamma) if beta is None else (y, gamma, beta)
    return y.graph.record("batchnorm", inputs, out, vjp), mu, var


def global_avg_pool(x: Var) -> Var:
    """Mean over the spatial axes of a batch x s x t x c tensor."""
    if x.value.ndim != 4:
        raise ShapeError(f"global average pooling needs b x s x t x c, got {x.shape}")
    return mean(x, axis=(1, 2))


def subsample(x: Var, stride: int) -> Var:
    """Keep every ``stride``-th row and column (identity for stride 1)."""
    if stride == 1:
        return x
    shape = x.shape

    def vjp(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[:, ::stride, ::stride, :] = g
        return (dx,)

    return x.graph.record(
        "subsample", (x,), np.ascontiguousarray(x.value[:, ::stride, ::stride, :]), vjp
    )


def pad_channels(x: Var, before: int, after: int) -> Var:
    """Zero-pad the channel axis."""
    if before == 0 and after == 0:
        return x
    channels = x.shape[-1]
    widths = [(0, 0)] * (x.value.ndim - 1) + [(before, after)]
    return x.graph.record(
        "pad_channels",
        (x,),
        np.pad(x.value, widths),
        lambda g: (g[..., before : before + channels],),
    )


# --- losses ---


def softmax_cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean softmax cross-entropy for integer class labels."""
    lv = logits.value
    labels = np.asarray(labels, dtype=np.intp)
    if lv.ndim != 2 or labels.shape != (lv.shape[0],):
        raise ShapeError.mismatch("softmax_cross_entropy", lv.shape, labels.shape)
    shifted = lv - lv.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(labels))
    loss = -log_probs[rows, labels].mean()

    def vjp(g):
        d_logits = np.exp(log_probs)
        d_logits[rows, labels] -= 1.0
        return (d_logits * (g / len(labels)),)

    return logits.graph.record(
        "softmax_xent", (logits,), np.asarray(loss, dtype=lv.dtype), vjp
    )
