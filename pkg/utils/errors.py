"""Exception hierarchy shared by the engine, the tools and the CLI."""

from __future__ import annotations

from typing import Optional, Sequence


class DacnetError(Exception):
    """Base class for every error raised by dacnet itself."""


class ShapeError(DacnetError, ValueError):
    """Raised when tensor or layer dimensions disagree."""

    @classmethod
    def mismatch(
        cls, what: str, left: Sequence[int], right: Sequence[int]
    ) -> "ShapeError":
        return cls(f"{what}: shapes {tuple(left)} and {tuple(right)} are incompatible")


class ContractError(DacnetError, ValueError):
    """Raised when a caller violates a documented precondition."""


class SpecError(DacnetError, ValueError):
    """Raised for malformed or unrecognized network specs."""


class DatasetError(DacnetError, ValueError):
    """Raised when a data file is truncated or holds out-of-range labels."""


class DivergenceError(DacnetError, RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(
        self, message: str, iteration: int, last_finite_loss: Optional[float] = None
    ):
        super().__init__(message)
        self.iteration = iteration
        self.last_finite_loss = last_finite_loss


class ParameterSearchError(DacnetError, RuntimeError):
    """Raised when approximation parameter search exhausts its caps."""

    def __init__(self, message: str, diagnostic: Optional[dict] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
