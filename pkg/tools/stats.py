"""Early-stopping estimate of the test error over replicated runs.

Each replicate k records a validation error v[k, i] and a test error
t[k, i] per epoch i. The stopping epoch m minimizes the validation error
averaged over replicates and a window of 2h+1 epochs around m; the reported
error is the test error averaged over the same replicates and window, with a
conservative bound on its variance.
"""

from __future__ import annotations

import numpy as np

from config import ESTIMATOR_HALF_WINDOW
from models.reports import ErrorRateEstimate
from utils.errors import ContractError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)


def window_means(errors: np.ndarray, half_window: int = ESTIMATOR_HALF_WINDOW) -> np.ndarray:
    """Replicate-and-window averages for every admissible window center.

    Entry ``i`` belongs to the 0-based center ``half_window + i``.
    """
    per_epoch = np.asarray(errors, dtype=np.float64).mean(axis=0)
    windows = np.lib.stride_tricks.sliding_window_view(per_epoch, 2 * half_window + 1)
    return windows.mean(axis=1)


def early_stop_estimate(
    val_errs: np.ndarray,
    test_errs: np.ndarray,
    half_window: int = ESTIMATOR_HALF_WINDOW,
) -> ErrorRateEstimate:
    """Windowed-argmin stopping epoch and the matching averaged test error.

    Args:
        val_errs: K x E validation errors, one row per replicate.
        test_errs: K x E test errors of the same runs.
        half_window: h; the window spans epochs m-h..m+h.

    Returns:
        ErrorRateEstimate with the 1-based epoch ``m``. Centers are restricted
        to epochs whose window fits inside the run; ties go to the earliest.

    Raises:
        ShapeError: If the matrices differ in shape or are not 2-D.
        ContractError: If there are fewer than 2 replicates or fewer
            than 2h+1 epochs.
    """
    val = np.asarray(val_errs, dtype=np.float64)
    test = np.asarray(test_errs, dtype=np.float64)
    if val.ndim != 2 or val.shape != test.shape:
        raise ShapeError.mismatch("validation/test error matrices", val.shape, test.shape)
    if half_window < 1:
        raise ContractError(f"half_window must be >= 1, got {half_window}")
    replicates, epochs = val.shape
    width = 2 * half_window + 1
    if replicates < 2:
        raise ContractError(f"need at least 2 replicates, got {replicates}")
    if epochs < width:
        raise ContractError(f"need at least {width} epochs for a window of {width}, got {epochs}")

    center = half_window + int(np.argmin(window_means(val, half_window)))
    block = test[:, center - half_window : center + half_window + 1]
    t_bar = float(block.mean())
    sigma_sq = float(np.sum((test[:, center] - t_bar) ** 2) / (replicates - 1))
    tau_term = float(np.sum((block.mean(axis=0) - t_bar) ** 2) / (width - 1))

    estimate = ErrorRateEstimate(
        m=center + 1,
        t_bar=t_bar,
        var_bound=sigma_sq / replicates + tau_term / width,
        sigma_sq_est=sigma_sq,
        tau_term_est=tau_term,
        replicates=replicates,
        window=width,
    )
    logger.info(
        f"📊 Early-stop estimate: m={estimate.m}, T̄={estimate.t_bar:.6f}, "
        f"stderr={estimate.stderr:.6f} ({replicates} replicates, window {width})"
    )
    return estimate
