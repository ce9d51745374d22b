"""Numerical engine: autograd tape, primitives, layers and spec executor."""

from engine.autograd import Graph, Var, backward, grad_check
from engine.executor import NetworkRunner, count_parameters, init_params, trace_shapes

__all__ = [
    "Graph",
    "Var",
    "backward",
    "grad_check",
    "NetworkRunner",
    "count_parameters",
    "init_params",
    "trace_shapes",
]
