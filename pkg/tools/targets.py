"""Target functions on [-1, 1]^d for the approximator.

A target is a vectorized callable mapping an ``N x d`` array of points to
``N`` values. Named targets are looked up with :func:`get_target`; tables
are read from CSV files laid out as ``x1,...,xd,value`` rows on a regular
grid and interpolated multilinearly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from utils.errors import ContractError, DatasetError
from utils.file_utils import read_table_csv
from utils.logger import get_logger

logger = get_logger(__name__)

Vectorized = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Target:
    """Named vectorized function; ``d`` is None when any dimension works."""

    name: str
    func: Vectorized
    d: Optional[int] = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.d is not None and points.shape[1] != self.d:
            raise ContractError(f"target '{self.name}' is defined for d={self.d}, got {points.shape[1]}")
        return np.asarray(self.func(points), dtype=np.float64).reshape(len(points))


NAMED_TARGETS: Dict[str, Vectorized] = {
    "sin_pi": lambda p: np.sin(np.pi * p[:, 0]),
    "product": lambda p: np.prod(p, axis=1),
    "identity": lambda p: p[:, 0],
    "constant": lambda p: np.ones(len(p)),
    "abs": lambda p: np.abs(p).mean(axis=1),
    "gaussian": lambda p: np.exp(-np.sum(p**2, axis=1)),
    "sum_sin": lambda p: np.sin(np.pi * p).mean(axis=1),
}


def get_target(name: str) -> Target:
    """Named target; raises ``ContractError`` listing the known names."""
    if name not in NAMED_TARGETS:
        raise ContractError(f"unknown function '{name}', expected one of {sorted(NAMED_TARGETS)}")
    return Target(name, NAMED_TARGETS[name])


def table_target(path: Union[str, Path]) -> Target:
    """Multilinear interpolant of a gridded ``x1,...,xd,value`` CSV table.

    Points outside the table's bounding box are clamped onto it.

    Raises:
        DatasetError: If the rows do not form a complete regular grid.
    """
    path = Path(path)
    header, table = read_table_csv(path)
    d = table.shape[1] - 1
    if d < 1:
        raise DatasetError(f"{path}: a table needs at least one coordinate column")
    axes = [np.unique(table[:, j]) for j in range(d)]
    if int(np.prod([len(a) for a in axes])) != len(table):
        raise DatasetError(f"{path}: {len(table)} rows do not form a regular grid")

    grid = np.full([len(a) for a in axes], np.nan)
    index = tuple(np.searchsorted(axes[j], table[:, j]) for j in range(d))
    grid[index] = table[:, -1]
    if np.isnan(grid).any():
        raise DatasetError(f"{path}: duplicate grid points in table")

    interpolator = RegularGridInterpolator(
        tuple(axes), grid, method="linear", bounds_error=False, fill_value=None
    )
    lower = np.array([a[0] for a in axes])
    upper = np.array([a[-1] for a in axes])

    def func(points: np.ndarray) -> np.ndarray:
        return interpolator(np.clip(points, lower, upper))

    logger.info(f"📊 Loaded table target {path.name}: d={d}, grid {[len(a) for a in axes]}")
    return Target(path.stem, func, d=d)


def resolve_target(spec: str) -> Target:
    """A named target, or a CSV table when ``spec`` names an existing file."""
    if spec in NAMED_TARGETS:
        return get_target(spec)
    if Path(spec).suffix.lower() == ".csv":
        return table_target(spec)
    return get_target(spec)


def uniform_grid(d: int, points_per_axis: int) -> np.ndarray:
    """Uniform grid over [-1, 1]^d including endpoints, ``points_per_axis ** d`` rows."""
    if points_per_axis < 2:
        raise ContractError(f"grid needs at least 2 points per axis, got {points_per_axis}")
    axis = np.linspace(-1.0, 1.0, points_per_axis)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
