"""Datasets: CIFAR binary readers, synthetic generators and splits.

Images are stored as N x H x W x C float arrays with pixels in [0, 1];
feature sets as N x d arrays. A :class:`Dataset` carries named splits as
index arrays that together partition the samples, plus the per-channel
mean used for normalization (computed on the training split only).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import DEFAULT_FOLDS
from tools.targets import uniform_grid
from utils.errors import ContractError, DatasetError
from utils.file_utils import write_table_csv
from utils.logger import get_logger

logger = get_logger(__name__)

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_PIXELS = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS
CIFAR10_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST_FILE = "test_batch.bin"
CIFAR100_TRAIN_FILE = "train.bin"
CIFAR100_TEST_FILE = "test.bin"

SQUARE_MARGIN = 0.1
THREE_POINTS = np.array([[0.1, 0.2], [0.5, 0.5], [0.9, 0.8]])
THREE_POINT_LABELS = np.array([0, 1, 0])


@dataclass
class Dataset:
    """Samples, labels and a partition of the sample indices into splits.

    ``num_classes`` is None for regression targets (float ``y``).
    """

    name: str
    x: np.ndarray
    y: np.ndarray
    num_classes: Optional[int] = None
    splits: Dict[str, np.ndarray] = field(default_factory=dict)
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ContractError(f"{self.name}: {len(self.x)} samples but {len(self.y)} labels")
        if self.num_classes is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
                raise DatasetError(f"{self.name}: labels must lie in [0, {self.num_classes})")
        if not self.splits:
            self.splits = {"train": np.arange(len(self.x))}
        covered = np.sort(np.concatenate([np.asarray(v, dtype=np.int64) for v in self.splits.values()]))
        if not np.array_equal(covered, np.arange(len(self.x))):
            raise ContractError(f"{self.name}: splits {sorted(self.splits)} do not partition {len(self.x)} samples")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def is_image(self) -> bool:
        return self.x.ndim == 4

    @property
    def input_shape(self) -> List[int]:
        return list(self.x.shape[1:])

    def has(self, split: str) -> bool:
        return split in self.splits and len(self.splits[split]) > 0

    def part(self, split: str) -> Tuple[np.ndarray, np.ndarray]:
        """Samples and labels of one split."""
        if split not in self.splits:
            raise ContractError(f"{self.name}: no '{split}' split, have {sorted(self.splits)}")
        index = self.splits[split]
        return self.x[index], self.y[index]

    def with_splits(self, splits: Dict[str, np.ndarray]) -> "Dataset":
        return dataclasses.replace(self, splits={k: np.asarray(v, dtype=np.int64) for k, v in splits.items()})


# --- CIFAR binary format ---


def read_cifar_records(
    path: Union[str, Path], label_bytes: int = 1, num_classes: int = 10
) -> Tuple[np.ndarray, np.ndarray]:
    """Parse a CIFAR binary file.

    Each record is ``label_bytes`` label bytes followed by 3072 pixel bytes:
    three 32x32 channel planes, row-major. The last label byte is used
    (the fine label for CIFAR-100).

    Returns:
        uint8 images N x 32 x 32 x 3 and int64 labels.

    Raises:
        DatasetError: For an empty or truncated file or a label >= num_classes.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CIFAR file not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    record = label_bytes + CIFAR_PIXELS
    if raw.size == 0 or raw.size % record:
        raise DatasetError(f"{path}: {raw.size} bytes is not a whole number of {record}-byte records")
    records = raw.reshape(-1, record)
    labels = records[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise DatasetError(
            f"{path}: record {bad[0]} has label {labels[bad[0]]}, expected < {num_classes}"
        )
    planes = records[:, label_bytes:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    return planes.transpose(0, 2, 3, 1).copy(), labels


def write_cifar_records(
    path: Union[str, Path],
    images: np.ndarray,
    labels: Sequence[int],
    coarse_labels: Optional[Sequence[int]] = None,
) -> Path:
    """Write uint8 N x 32 x 32 x 3 images in the CIFAR binary layout.

    With ``coarse_labels`` each record gets two label bytes (coarse, fine).
    """
    path = Path(path)
    images = np.asarray(images)
    if images.shape[1:] != (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS) or images.dtype != np.uint8:
        raise ContractError(f"expected uint8 N x 32 x 32 x 3 images, got {images.dtype} {images.shape}")
    label_cols = [np.asarray(labels, dtype=np.uint8)]
    if coarse_labels is not None:
        label_cols.insert(0, np.asarray(coarse_labels, dtype=np.uint8))
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    records = np.concatenate([col.reshape(-1, 1) for col in label_cols] + [planes], axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    records.astype(np.uint8).tofile(path)
    return path


def _cifar_files(path: Path, train_files: List[str], test_file: str) -> Tuple[List[Path], List[Path]]:
    if path.is_file():
        return [path], []
    if not path.is_dir():
        raise FileNotFoundError(f"CIFAR path not found: {path}")
    train = [path / name for name in train_files if (path / name).exists()]
    if not train:
        raise DatasetError(f"{path}: none of {train_files} found")
    test = [path / test_file] if (path / test_file).exists() else []
    return train, test


def _load_cifar(
    name: str,
    path: Union[str, Path],
    label_bytes: int,
    num_classes: int,
    train_files: List[str],
    test_file: str,
    fold: Optional[int],
    folds: int,
    seed: int,
) -> Dataset:
    train_paths, test_paths = _cifar_files(Path(path), train_files, test_file)
    parts = [read_cifar_records(p, label_bytes, num_classes) for p in train_paths + test_paths]
    images = np.concatenate([p[0] for p in parts]).astype(np.float32) / 255.0
    labels = np.concatenate([p[1] for p in parts])
    n_train = sum(len(p[1]) for p in parts[: len(train_paths)])

    splits: Dict[str, np.ndarray] = {"train": np.arange(n_train)}
    if fold is not None:
        splits = kfold_split(n_train, folds, fold, seed)
    if n_train < len(labels):
        splits["test"] = np.arange(n_train, len(labels))
    dataset = Dataset(name, images, labels, num_classes, splits)
    sizes = {k: len(v) for k, v in dataset.splits.items()}
    logger.info(f"📊 Loaded {name}: {len(dataset)} images, splits {sizes}")
    return normalize(dataset)


def load_cifar10_bin(
    path: Union[str, Path], fold: Optional[int] = None, folds: int = DEFAULT_FOLDS, seed: int = 0
) -> Dataset:
    """CIFAR-10 from a single ``.bin`` file or the extracted batches directory.

    Pixels are scaled to [0, 1] and the training split's per-channel mean is
    subtracted. With ``fold`` the training records are split k-fold into
    train and val; ``test_batch.bin`` becomes the test split when present.
    """
    return _load_cifar(
        "cifar10", path, 1, 10, CIFAR10_TRAIN_FILES, CIFAR10_TEST_FILE, fold, folds, seed
    )


def load_cifar100_bin(
    path: Union[str, Path], fold: Optional[int] = None, folds: int = DEFAULT_FOLDS, seed: int = 0
) -> Dataset:
    """CIFAR-100 (two label bytes per record, fine label used)."""
    return _load_cifar(
        "cifar100", path, 2, 100, [CIFAR100_TRAIN_FILE], CIFAR100_TEST_FILE, fold, folds, seed
    )


# --- splits and normalization ---


def kfold_split(n: int, folds: int, fold_index: int, seed: int) -> Dict[str, np.ndarray]:
    """Shuffled k-fold split: fold ``fold_index`` is val, the rest train.

    Raises:
        ContractError: If ``folds < 2``, ``n < folds`` or the index is out of range.
    """
    if folds < 2:
        raise ContractError(f"need at least 2 folds, got {folds}")
    if not 0 <= fold_index < folds:
        raise ContractError(f"fold_index must be in [0, {folds}), got {fold_index}")
    if n < folds:
        raise ContractError(f"cannot split {n} samples into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    chunks = np.array_split(order, folds)
    val = np.sort(chunks[fold_index])
    train = np.sort(np.concatenate([c for i, c in enumerate(chunks) if i != fold_index]))
    return {"train": train, "val": val}


def with_holdout(dataset: Dataset, val_frac: float = 0.2, test_frac: float = 0.2, seed: int = 0) -> Dataset:
    """Re-split all samples into shuffled train/val/test parts."""
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise ContractError(f"holdout fractions must be >= 0 and sum below 1, got {val_frac}, {test_frac}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_frac))
    n_test = int(round(n * test_frac))
    splits = {
        "val": np.sort(order[:n_val]),
        "test": np.sort(order[n_val : n_val + n_test]),
        "train": np.sort(order[n_val + n_test :]),
    }
    return dataset.with_splits(splits)


def normalize(dataset: Dataset, split: str = "train") -> Dataset:
    """Subtract the per-channel (images) or per-feature mean of ``split``.

    Statistics come from ``split`` only and are stored on the result.
    Re-normalizing first restores the previous mean.
    """
    x = dataset.x if dataset.mean is None else dataset.x + dataset.mean
    fit, _ = dataclasses.replace(dataset, x=x).part(split)
    axes = tuple(range(fit.ndim - 1))
    mean = fit.mean(axis=axes).astype(x.dtype)
    return dataclasses.replace(dataset, x=x - mean, mean=mean)


# --- separability ---


@dataclass(frozen=True)
class SeparabilityCertificate:
    """Best margin found by the direction search and whether it clears the tolerance."""

    separable: bool
    best_margin: float
    candidates: int


def linear_separability_certificate(
    points: np.ndarray, labels: np.ndarray, angles: int = 3600, tolerance: float = 1e-9
) -> SeparabilityCertificate:
    """Search unit normals w on a fine circle grid for a separating line.

    For a fixed w the best offset b is exact: the margin
    ``min_i s_i (w . x_i + b)`` (``s_i = +-1`` from the 0/1 labels) peaks at
    half the gap between the smallest positive and the largest negative
    projection. Planar points only.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ContractError(f"separability certificate works on planar points, got shape {points.shape}")
    if set(np.unique(labels).tolist()) - {0, 1}:
        raise ContractError("separability certificate needs binary 0/1 labels")
    positive = labels == 1
    if positive.all() or not positive.any():
        return SeparabilityCertificate(separable=True, best_margin=float("inf"), candidates=0)

    theta = np.linspace(0.0, 2 * np.pi, angles, endpoint=False)
    normals = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    projections = points @ normals.T
    gaps = projections[positive].min(axis=0) - projections[~positive].max(axis=0)
    best = float(gaps.max() / 2)
    return SeparabilityCertificate(separable=best > tolerance, best_margin=best, candidates=angles)


# --- synthetic generators ---


def gen_square_dataset(n: int, seed: int, margin: float = SQUARE_MARGIN) -> Dataset:
    """Points uniform in [-2, 2]^2, label 1 inside the rotated square ``|x1| + |x2| < 1``.

    Points with ``| 1 - |x|_1 | < margin`` are rejected and resampled.
    """
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    kept: List[np.ndarray] = []
    count = 0
    while count < n:
        batch = rng.uniform(-2.0, 2.0, size=(2 * n, 2))
        norm = np.abs(batch).sum(axis=1)
        batch = batch[np.abs(1.0 - norm) >= margin]
        kept.append(batch)
        count += len(batch)
    x = np.concatenate(kept)[:n]
    y = (np.abs(x).sum(axis=1) < 1.0).astype(np.int64)
    return Dataset("square", x, y, num_classes=2)


def gen_three_point_dataset() -> Dataset:
    """Three collinear points; the middle one has the other class."""
    return Dataset("three-point", THREE_POINTS.copy(), THREE_POINT_LABELS.copy(), num_classes=2)


def gen_blobs(n: int, centers: Union[int, np.ndarray] = 3, seed: int = 0, spread: float = 0.25) -> Dataset:
    """Gaussian blobs in the plane, ``n`` samples split evenly across classes.

    An integer ``centers`` places that many centers on the circle of radius 2.
    """
    if isinstance(centers, int):
        angle = 2 * np.pi * np.arange(centers) / centers
        centers = 2.0 * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    centers = np.asarray(centers, dtype=np.float64)
    classes = len(centers)
    if classes < 2:
        raise ContractError(f"need at least 2 blob centers, got {classes}")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    x = centers[y] + spread * rng.standard_normal((n, centers.shape[1]))
    return Dataset("blobs", x, y, num_classes=classes)


def gen_image_dataset(
    n: int, classes: int = 10, size: int = CIFAR_SIDE, seed: int = 0, noise: float = 0.15
) -> Dataset:
    """Noisy copies of smooth per-class templates, pixels clipped to [0, 1].

    Templates are random 4x4x3 patterns upsampled to ``size``; each sample
    adds Gaussian pixel noise to its class template.
    """
    if size % 4:
        raise ContractError(f"image size must be a multiple of 4, got {size}")
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.0, 1.0, size=(classes, 4, 4, CIFAR_CHANNELS))
    block = np.ones((1, size // 4, size // 4, 1))
    templates = np.stack([np.kron(c[None], block)[0] for c in coarse])
    y = np.arange(n) % classes
    rng.shuffle(y)
    x = templates[y] + noise * rng.standard_normal((n, size, size, CIFAR_CHANNELS))
    return Dataset("images", np.clip(x, 0.0, 1.0).astype(np.float32), y, num_classes=classes)


def gen_function_grid(fn: Callable[[np.ndarray], np.ndarray], d: int, points: int, name: str = "grid") -> Dataset:
    """Regression grid: ``points`` per axis over [-1, 1]^d and the target values."""
    x = uniform_grid(d, points)
    return Dataset(name, x, np.asarray(fn(x), dtype=np.float64))


SYNTHETIC: Dict[str, Callable[[int, int], Dataset]] = {
    "square": lambda n, seed: gen_square_dataset(n, seed),
    "three-point": lambda n, seed: gen_three_point_dataset(),
    "blobs": lambda n, seed: gen_blobs(n, 3, seed),
    "images": lambda n, seed: gen_image_dataset(n, 10, CIFAR_SIDE, seed),
}
SYNTHETIC_SIZES = {"square": 1000, "three-point": 3, "blobs": 600, "images": 2000}


def load_dataset(source: str, seed: int = 0, samples: Optional[int] = None) -> Dataset:
    """Resolve a ``--data`` argument.

    Accepted forms are ``synthetic:<name>``, ``cifar100:<path>`` and a CIFAR-10
    ``.bin`` file or batches directory (optionally prefixed ``cifar10:``).
    Synthetic sets with at least 10 samples get a 60/20/20 holdout split.
    """
    if source.startswith("synthetic:"):
        name = source.split(":", 1)[1]
        if name not in SYNTHETIC:
            raise ContractError(f"unknown synthetic dataset '{name}', expected one of {sorted(SYNTHETIC)}")
        n = samples or SYNTHETIC_SIZES[name]
        dataset = SYNTHETIC[name](n, seed)
        if len(dataset) >= 10:
            dataset = with_holdout(dataset, 0.2, 0.2, seed)
        return normalize(dataset) if dataset.is_image else dataset
    if source.startswith("cifar100:"):
        return load_cifar100_bin(source.split(":", 1)[1], seed=seed)
    if source.startswith("cifar10:"):
        source = source.split(":", 1)[1]
    return load_cifar10_bin(source, seed=seed)


def export_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write ``x1,...,xd,label`` rows (``value`` for regression sets)."""
    value_name = "label" if dataset.num_classes is not None else "value"
    x = dataset.x.reshape(len(dataset), -1)
    values = [int(v) if dataset.num_classes is not None else repr(float(v)) for v in dataset.y]
    return write_table_csv(path, x, values, value_name=value_name)
