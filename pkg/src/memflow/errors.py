"""Exception types raised by memflow.

Every solver failure that a caller may want to react to has its own class so
the CLI can map it to a distinct exit status.
"""

from __future__ import annotations

from typing import Any


class MemflowError(Exception):
    """Base class for all library errors."""


class SingularTensor(MemflowError):
    """A tensor that must be inverted is (numerically) singular."""

    def __init__(self, message: str = "singular tensor", location: Any = None):
        if location is not None:
            message = f"{message} at {location}"
        super().__init__(message)
        self.location = location


class SingularPoint(MemflowError):
    """Pointwise evaluation requested where the memory function blows up."""


class NoDecay(MemflowError):
    """Kernel tail cannot be truncated within the age cap."""


class GridMismatch(MemflowError):
    """Sample array does not line up with the age grid."""


class NegativeRadicand(MemflowError):
    """Wagner damping radicand is negative (non-physical Finger tensor)."""


class BoundViolated(MemflowError):
    """A bound that should hold was exceeded; ``witness`` holds the offender."""

    def __init__(self, message: str, witness: Any = None, ratio: float | None = None):
        super().__init__(message)
        self.witness = witness
        self.ratio = ratio


class CflViolation(MemflowError):
    """Time step too large for the transport step."""


class LinearSolveFailure(MemflowError):
    """Sparse factorisation or solve broke down."""


class GeometryUnsupported(MemflowError):
    """Requested geometry is outside what the solver handles."""


class DivergentStress(MemflowError):
    """The stationary stress integral does not converge for this data."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class NotConverged(MemflowError):
    """Fixed-point iteration did not reach tolerance."""

    def __init__(self, iterations: int, contraction: float | None, message: str = ""):
        msg = message or (
            f"not converged after {iterations} iterations "
            f"(last contraction factor {contraction})"
        )
        super().__init__(msg)
        self.iterations = iterations
        self.contraction = contraction


class Inadmissible(MemflowError):
    """Problem data violate the smallness / decay requirements."""


class Aborted(MemflowError):
    """Time integration stopped; ``state`` is the last valid state."""

    def __init__(self, reason: str, state: Any = None):
        super().__init__(reason)
        self.reason = reason
        self.state = state
        self.trajectory = None


class ConfigError(MemflowError):
    """Invalid run configuration."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field:
            where.append(field)
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
        self.field = field
        self.line = line


class SchemaMismatch(MemflowError):
    """Two time series cannot be compared."""
