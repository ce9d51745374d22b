"""SGD training harness.

Momentum SGD on softmax cross-entropy with a step learning-rate schedule and
L2 regularization of kernel weights only; DAC biases, batch-norm
parameters and output biases are never decayed. Batch-norm running
statistics are committed once per step; errors are measured in inference
mode at the end of every epoch.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import AUGMENT_FLIP_PROB, AUGMENT_PAD, DEFAULT_FOLDS, ESTIMATOR_HALF_WINDOW
from engine import ops
from engine.autograd import Graph, backward
from engine.executor import ROLES, NetworkRunner, init_params, trace_shapes
from models.network import NetworkSpec
from models.reports import ErrorRateEstimate, HistoryRow, TrainHistory
from models.settings import TrainConfig
from tools.datasets import Dataset, kfold_split, normalize
from tools.stats import early_stop_estimate
from utils.errors import ContractError, DivergenceError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

ParamKey = Tuple[str, str]
Arrays = Dict[ParamKey, np.ndarray]

__all__ = [
    "TrainResult",
    "ReplicateResult",
    "sgd_step",
    "augment",
    "evaluate_error",
    "train",
    "train_replicates",
    "early_stop_estimate",
]


@dataclass
class TrainResult:
    history: TrainHistory
    spec: NetworkSpec


@dataclass
class ReplicateResult:
    runs: List[TrainResult]
    estimate: Optional[ErrorRateEstimate]


def sgd_step(
    params: Arrays, grads: Arrays, state: Arrays, cfg: TrainConfig, iteration: int
) -> Tuple[Arrays, Arrays]:
    """One momentum step: ``v = mu v - lr (g + 2 l2 w)``, ``w = w + v``.

    The L2 term applies to parameters whose role is ``kernel`` (dense
    weights and conv kernels); keys are ``(layer, parameter)`` pairs.

    Returns:
        New parameters and new velocity state; the inputs are not modified.
    """
    lr = cfg.lr_at(iteration)
    new_params: Arrays = {}
    new_state: Arrays = {}
    for key, value in params.items():
        grad = grads[key]
        if np.shape(grad) != np.shape(value):
            raise ShapeError.mismatch(f"gradient of {key[0]}.{key[1]}", np.shape(grad), np.shape(value))
        if ROLES.get(key[1]) == "kernel" and cfg.l2_kernel:
            grad = grad + 2.0 * cfg.l2_kernel * value
        velocity = state.get(key)
        velocity = -lr * grad if velocity is None else cfg.momentum * velocity - lr * grad
        new_state[key] = velocity
        new_params[key] = value + velocity
    return new_params, new_state


def augment(
    batch: np.ndarray,
    rng: np.random.Generator,
    mode: str = "pad_crop_flip",
    pad: int = AUGMENT_PAD,
    flip_prob: float = AUGMENT_FLIP_PROB,
) -> np.ndarray:
    """Zero-pad by ``pad`` pixels, crop back at a random offset, flip horizontally.

    ``mode="none"`` returns the batch unchanged. Works on N x H x W x C.
    """
    if mode == "none":
        return batch
    if mode != "pad_crop_flip":
        raise ContractError(f"unknown augmentation '{mode}'")
    if batch.ndim != 4:
        raise ShapeError(f"augmentation needs an N x H x W x C batch, got shape {batch.shape}")
    n, height, width, _ = batch.shape
    padded = np.pad(batch, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    rows = rng.integers(0, 2 * pad + 1, size=n)
    cols = rng.integers(0, 2 * pad + 1, size=n)
    flips = rng.random(n) < flip_prob
    out = np.empty_like(batch)
    for i in range(n):
        crop = padded[i, rows[i] : rows[i] + height, cols[i] : cols[i] + width]
        out[i] = crop[:, ::-1] if flips[i] else crop
    return out


def evaluate_error(
    runner: NetworkRunner, x: np.ndarray, y: np.ndarray, threads: int = 1
) -> Tuple[float, float]:
    """Inference-mode error rate and mean cross-entropy."""
    if len(x) == 0:
        return float("nan"), float("nan")
    logits = runner.predict(x, threads=threads)
    error = float(np.mean(np.argmax(logits, axis=1) != y))
    graph = Graph("f64")
    loss = float(ops.softmax_cross_entropy(graph.constant(logits), y).value)
    return error, loss


def _gradients(
    runner: NetworkRunner, xb: np.ndarray, yb: np.ndarray, precision: str
) -> Tuple[float, Arrays, Dict[str, Tuple[np.ndarray, np.ndarray]]]:
    graph = Graph(precision)
    bound = runner.bind(graph)
    out, stats = runner.forward(graph, graph.constant(xb), bound, training=True)
    loss = ops.softmax_cross_entropy(out, yb)
    grads = backward(graph, loss)
    arrays = {key: np.asarray(grads[var.id], dtype=np.float64) for key, var in bound.items()}
    return float(loss.value), arrays, stats


def _sharded_gradients(
    runner: NetworkRunner, xb: np.ndarray, yb: np.ndarray, precision: str, pool: ThreadPoolExecutor, shards: int
) -> Tuple[float, Arrays, Dict[str, Tuple[np.ndarray, np.ndarray]]]:
    """Per-shard gradients on worker threads, accumulated in shard order."""
    parts = [p for p in np.array_split(np.arange(len(xb)), shards) if len(p)]
    results = list(pool.map(lambda idx: _gradients(runner, xb[idx], yb[idx], precision), parts))
    total = float(len(xb))
    loss = 0.0
    grads: Arrays = {}
    stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for idx, (part_loss, part_grads, part_stats) in zip(parts, results):
        share = len(idx) / total
        loss += share * part_loss
        for key, value in part_grads.items():
            grads[key] = grads[key] + share * value if key in grads else share * value
        for name, (mu, var) in part_stats.items():
            if name in stats:
                stats[name] = (stats[name][0] + share * mu, stats[name][1] + share * var)
            else:
                stats[name] = (share * mu, share * var)
    return loss, grads, stats


def train(
    net: NetworkSpec,
    data: Dataset,
    cfg: TrainConfig,
    threads: int = 1,
    shard_gradients: bool = False,
    fold_index: Optional[int] = None,
) -> TrainResult:
    """Train ``net`` on the ``train`` split of ``data``.

    Missing parameters are initialized He-normal from ``cfg.seed``. One epoch
    is ``ceil(n_train / batch_size)`` iterations over a fresh permutation;
    the last epoch may be partial. With ``shard_gradients`` each batch is
    split across ``threads`` workers (batch-norm statistics become per-shard).

    Raises:
        DivergenceError: On the first non-finite loss.
        ShapeError: If the data does not match the network input.
    """
    if data.num_classes is None:
        raise ContractError(f"{data.name} is a regression set; training needs class labels")
    x_train, y_train = data.part("train")
    if len(x_train) == 0:
        raise ContractError(f"{data.name} has an empty train split")
    if list(x_train.shape[1:]) != list(net.input_shape):
        raise ShapeError.mismatch(f"dataset {data.name} vs network {net.name}", x_train.shape[1:], net.input_shape)

    outputs = trace_shapes(net)[-1].output_shape
    if len(outputs) != 1 or outputs[0] < data.num_classes:
        raise ShapeError(f"{net.name} emits {outputs}, need a logit vector for {data.num_classes} classes")

    rng = np.random.default_rng(cfg.seed)
    spec = init_params(net, rng)
    runner = NetworkRunner(spec, precision=cfg.precision)
    n_train = len(x_train)
    per_epoch = max(1, math.ceil(n_train / cfg.batch_size))
    epochs = math.ceil(cfg.total_iters / per_epoch)
    use_augmentation = cfg.augmentation != "none" and data.is_image

    logger.info("=" * 80)
    logger.info(f"🚀 Training {spec.name} on {data.name}")
    logger.info(
        f"📊 {n_train} training samples, batch {cfg.batch_size}, {cfg.total_iters} iterations "
        f"({epochs} epochs), lr {cfg.base_lr} boundaries {cfg.lr_boundaries}, seed {cfg.seed}"
    )
    logger.info("=" * 80)

    params: Arrays = {key: runner.get(key) for key in runner.parameter_keys()}
    state: Arrays = {}
    history = TrainHistory(seed=cfg.seed, fold_index=fold_index)
    last_finite: Optional[float] = None
    iteration = 0
    start = time.time()
    pool = ThreadPoolExecutor(max_workers=threads) if shard_gradients and threads > 1 else None
    try:
        for epoch in range(1, epochs + 1):
            order = rng.permutation(n_train)
            losses: List[float] = []
            for step in range(per_epoch):
                if iteration >= cfg.total_iters:
                    break
                index = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
                xb, yb = x_train[index], y_train[index]
                if use_augmentation:
                    xb = augment(xb, rng, cfg.augmentation)
                if pool is not None:
                    loss, grads, stats = _sharded_gradients(runner, xb, yb, cfg.precision, pool, threads)
                else:
                    loss, grads, stats = _gradients(runner, xb, yb, cfg.precision)
                if not np.isfinite(loss):
                    logger.error(f"❌ Non-finite loss at iteration {iteration} (last finite {last_finite})")
                    raise DivergenceError(
                        f"loss became {loss} at iteration {iteration}; last finite loss {last_finite}",
                        iteration=iteration,
                        last_finite_loss=last_finite,
                    )
                last_finite = loss
                losses.append(loss)
                params, state = sgd_step(params, grads, state, cfg, iteration)
                for key, value in params.items():
                    runner.set(key, value)
                # a frozen step leaves the running statistics alone too
                if cfg.lr_at(iteration) > 0:
                    runner.commit_batch_stats(stats)
                iteration += 1

            row = _epoch_row(runner, data, epoch, iteration, float(np.mean(losses)), cfg, threads)
            history.rows.append(row)
            logger.info(
                f"📊 Epoch {epoch}/{epochs}: iter {iteration}, loss {row.train_loss:.4f}, "
                f"train err {row.train_err:.4f}, val err {_show(row.val_err)}, test err {_show(row.test_err)}"
            )
    finally:
        if pool is not None:
            pool.shutdown()

    history.elapsed_seconds = time.time() - start
    logger.info(f"✅ Training finished in {history.elapsed_seconds:.2f}s, final train error {history.rows[-1].train_err:.4f}")
    return TrainResult(history=history, spec=runner.export())


def _show(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def _epoch_row(
    runner: NetworkRunner, data: Dataset, epoch: int, iteration: int, train_loss: float, cfg: TrainConfig, threads: int
) -> HistoryRow:
    errors: Dict[str, Optional[float]] = {}
    for split in ("train", "val", "test"):
        if data.has(split):
            x, y = data.part(split)
            errors[split] = evaluate_error(runner, x, y, threads)[0]
        else:
            errors[split] = None
    return HistoryRow(
        epoch=epoch,
        iteration=iteration,
        train_err=errors["train"],
        val_err=errors["val"],
        test_err=errors["test"],
        train_loss=train_loss,
        lr=cfg.lr_at(max(iteration - 1, 0)),
    )


def train_replicates(
    net: NetworkSpec,
    data: Dataset,
    cfg: TrainConfig,
    replicates: int,
    threads: int = 1,
    shard_gradients: bool = False,
) -> ReplicateResult:
    """Train ``replicates`` runs and combine them with :func:`early_stop_estimate`.

    Replicate k uses seed ``cfg.seed + k`` and fold k of a k-fold split of
    the pooled train and val samples (``max(replicates, DEFAULT_FOLDS)``
    folds); the test split is shared. The estimate is None when fewer than
    2 replicates ran, there is no val or test split, or the runs are
    shorter than the estimator window.
    """
    if replicates < 1:
        raise ContractError(f"replicates must be >= 1, got {replicates}")
    pool = np.sort(np.concatenate([data.splits[s] for s in ("train", "val") if s in data.splits]))
    folds = max(replicates, DEFAULT_FOLDS)
    runs: List[TrainResult] = []
    for k in range(replicates):
        fold_data = data
        if replicates > 1:
            split = kfold_split(len(pool), folds, k, cfg.seed)
            splits = {"train": pool[split["train"]], "val": pool[split["val"]]}
            if data.has("test"):
                splits["test"] = data.splits["test"]
            fold_data = data.with_splits(splits)
            if data.mean is not None:
                fold_data = normalize(fold_data)
        run_cfg = cfg.model_copy(update={"seed": cfg.seed + k})
        logger.info(f"🚀 Replicate {k + 1}/{replicates} (fold {k}, seed {run_cfg.seed})")
        runs.append(
            train(net.strip_params(), fold_data, run_cfg, threads, shard_gradients, fold_index=k)
        )

    estimate = None
    val = [r.history.column("val_err") for r in runs]
    test = [r.history.column("test_err") for r in runs]
    window = 2 * ESTIMATOR_HALF_WINDOW + 1
    usable = all(v is not None for row in val + test for v in row)
    if replicates >= 2 and usable and len(runs[0].history.rows) >= window:
        estimate = early_stop_estimate(np.asarray(val), np.asarray(test))
    else:
        logger.warning(
            f"⚠️ No early-stop estimate: {replicates} replicate(s), "
            f"{len(runs[0].history.rows)} epochs, val/test present: {usable}"
        )
    return ReplicateResult(runs=runs, estimate=estimate)
