"""Pydantic models for everything the tools report back.

This module defines complexity reports, approximation certificates,
training histories, estimator results, equivalence and demo reports, and
the error envelope used by the CLI.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class ComplexityEntry(BaseModel):
    """FLOPs and weights of one layer.

    ``covered`` marks dense/conv layers, whose FLOPs have closed-form
    formulas; batch norm, bias, pooling and residual additions are counted by
    the instrumented interpreter only.
    """

    name: str
    kind: str
    output_shape: List[int]
    covered: bool
    flops_formula: Optional[int] = None
    flops_instrumented: int
    weights: int = Field(..., description="Trainable parameters actually present.")
    weights_formula: Optional[int] = None


class ComplexityTotals(BaseModel):
    flops_formula: int = Field(..., description="Sum of formula FLOPs over covered layers.")
    flops_instrumented: int = Field(..., description="Instrumented FLOPs over covered layers.")
    flops_uncovered: int = Field(..., description="Instrumented FLOPs of the other layers.")
    weights: int
    weights_formula: int


class ComplexityReport(BaseModel):
    """Per-layer and total FLOPs/weights of a network at a given input shape."""

    model: str
    input_shape: List[int]
    entries: List[ComplexityEntry]
    totals: ComplexityTotals
    dac_overhead_ratios: Optional[Dict[str, float]] = None

    @model_validator(mode="after")
    def _totals_match_entries(self) -> "ComplexityReport":
        covered = [e for e in self.entries if e.covered]
        expected = ComplexityTotals(
            flops_formula=sum(e.flops_formula or 0 for e in covered),
            flops_instrumented=sum(e.flops_instrumented for e in covered),
            flops_uncovered=sum(e.flops_instrumented for e in self.entries if not e.covered),
            weights=sum(e.weights for e in self.entries),
            weights_formula=sum(e.weights_formula or 0 for e in covered),
        )
        if expected != self.totals:
            raise ValueError("totals must equal the sums of the entries")
        return self

    def to_text(self) -> str:
        header = f"{'layer':<24}{'kind':<16}{'flops(formula)':>16}{'flops(instr.)':>16}{'weights':>12}"
        lines = [f"Model: {self.model}  input: {'x'.join(map(str, self.input_shape))}", header, "-" * len(header)]
        for e in self.entries:
            formula = "-" if e.flops_formula is None else str(e.flops_formula)
            lines.append(
                f"{e.name:<24}{e.kind:<16}{formula:>16}{e.flops_instrumented:>16}{e.weights:>12}"
            )
        t = self.totals
        lines.append("-" * len(header))
        lines.append(f"{'covered total':<40}{t.flops_formula:>16}{t.flops_instrumented:>16}{t.weights:>12}")
        lines.append(f"{'uncovered (bn/bias/pool/residual)':<40}{'':>16}{t.flops_uncovered:>16}")
        if self.dac_overhead_ratios:
            ratios = ", ".join(f"{k}={v:.5f}" for k, v in self.dac_overhead_ratios.items())
            lines.append(f"DAC/std ratios: {ratios}")
        return "\n".join(lines)


class ErrorRateEstimate(BaseModel):
    """Early-stopping statistic over K replicates and a 2h+1 epoch window.

    Attributes:
        m: 1-based epoch index of the validation argmin window center.
        t_bar: Test error averaged over replicates and the window.
        var_bound: Conservative estimate of Var(t_bar).
        sigma_sq_est: Spread of the replicates at epoch m.
        tau_term_est: Spread of the replicate means across the window.
    """

    m: int
    t_bar: float
    var_bound: float
    sigma_sq_est: float
    tau_term_est: float
    replicates: int = 5
    window: int = 5

    @property
    def stderr(self) -> float:
        return math.sqrt(self.var_bound)


class ApproxCertificate(BaseModel):
    """Plain-text certificate of an emitted approximating network."""

    function: str
    d: int
    delta: float
    mesh: int
    k: int
    shrink: float = 1.0
    layer_widths: List[int]
    max_fan_in: List[int]
    sup_error: float
    grid_points: int
    epsilon: Optional[float] = None
    passed: Optional[bool] = None

    def to_text(self) -> str:
        lines = [
            f"function: {self.function}",
            f"d: {self.d}",
            f"delta: {self.delta:.10g}",
            f"mesh: {self.mesh}",
            f"k: {self.k}",
            f"input contraction: {self.shrink:.10g}",
            f"layer widths: {self.layer_widths}",
            f"max inputs per unit: {self.max_fan_in}",
            f"grid: {self.grid_points} points per axis ({self.grid_points ** self.d} total)",
            f"measured sup error: {self.sup_error:.6e}",
        ]
        if self.epsilon is not None:
            lines.append(f"epsilon: {self.epsilon:.6g}")
            lines.append(f"certified: {'yes' if self.passed else 'no'}")
        return "\n".join(lines) + "\n"


class HistoryRow(BaseModel):
    epoch: int
    iteration: int
    train_err: float
    val_err: Optional[float] = None
    test_err: Optional[float] = None
    train_loss: float
    lr: float


class TrainHistory(BaseModel):
    """Per-epoch training history of one run."""

    rows: List[HistoryRow] = Field(default_factory=list)
    seed: int
    fold_index: Optional[int] = None
    elapsed_seconds: float = 0.0

    def column(self, name: str) -> List[Optional[float]]:
        return [getattr(row, name) for row in self.rows]


class EquivalenceReport(BaseModel):
    """Deviation between a standard chain and its rewritten form."""

    layers: int
    width: int
    seed: int
    samples: int
    max_deviation: float
    tolerance: float
    passed: bool


class WitnessReport(BaseModel):
    """Outcome of the shared-bias search against a non-shared DAC instance."""

    target: str
    best_deviation: float
    candidates_tried: int
    representable: bool


class DemoReport(BaseModel):
    name: str
    checks: Dict[str, float] = Field(default_factory=dict)
    samples: int = 0
    correctly_classified: int = 0
    linear_separable: Optional[bool] = None
    dac_separable: Optional[bool] = None
    trained_accuracy: Optional[float] = None
    passed: bool


class ErrorResponse(BaseModel):
    """Structured error payload for ``--json`` output.

    Attributes:
        error: Human-readable error description.
        details: Additional error details if available.
    """

    error: str = Field(..., description="Error description.")
    details: Optional[str] = Field(default=None, description="Additional error details.")
