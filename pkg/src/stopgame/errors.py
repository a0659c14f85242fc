"""Exception types raised across the package."""

from __future__ import annotations


class StopGameError(Exception):
    """Base class for all package errors."""


class ExpressionError(StopGameError, ValueError):
    """A coefficient expression could not be parsed or is outside the grammar."""


class SpecError(StopGameError, ValueError):
    """A problem instance is malformed or produced a non-finite coefficient value."""


class SimulationError(StopGameError, FloatingPointError):
    """A simulated path produced a non-finite state."""


class CFLViolation(StopGameError):
    """The explicit time step breaks the monotonicity (positive-coefficient) condition."""


class UnsupportedInstance(StopGameError):
    """The grid solver cannot handle this instance (dimension or cross diffusion)."""


class MeshRejected(StopGameError):
    """A lattice mesh would need negative transition weights."""


class OrderingMismatch(StopGameError):
    """Stopper-first and controller-first inductions disagree (an implementation bug)."""
