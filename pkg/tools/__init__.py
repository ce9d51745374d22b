"""Tools built on the engine: rewrites, constructions, analysis and training."""

from .approximator import approx_1d, approx_nd, run_approximation, search_params, select_params
from .complexity import compare_reports, model_report, run_flops
from .equivalence import non_equivalence_witness, run_equivalence
from .resnet import build_resnet, dacify, preset
from .stats import early_stop_estimate
from .training import sgd_step, train, train_replicates

__all__ = [
    "approx_1d",
    "approx_nd",
    "run_approximation",
    "search_params",
    "select_params",
    "compare_reports",
    "model_report",
    "run_flops",
    "non_equivalence_witness",
    "run_equivalence",
    "build_resnet",
    "dacify",
    "preset",
    "early_stop_estimate",
    "sgd_step",
    "train",
    "train_replicates",
]
