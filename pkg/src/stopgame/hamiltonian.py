"""Pointwise Hamiltonian of the obstacle HJB equation over a finite control set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .model import ProblemSpec

__all__ = ["HamiltonianInput", "hamiltonian_a", "hamiltonian_min"]


@dataclass(frozen=True)
class HamiltonianInput:
    """Arguments ``(t, x, p, A)`` of the Hamiltonian; ``A`` is symmetrised on construction."""

    t: float
    x: np.ndarray
    p: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = x.shape[0]
        if x.shape != (d,) or p.shape != (d,) or A.shape != (d, d):
            raise ValueError(f"inconsistent shapes x{x.shape} p{p.shape} A{A.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "A", 0.5 * (A + A.T))


def hamiltonian_a(spec: ProblemSpec, inp: HamiltonianInput, a: int) -> float:
    """``-b.p - 1/2 Tr(sigma sigma^T A) - f`` at control index ``a``."""
    if not 0 <= a < spec.n_controls:
        raise IndexError(f"control index {a} out of range")
    x = inp.x[None, :]
    b = spec.b(inp.t, x, a)[0]
    s = spec.sigma(inp.t, x, a)[0]
    f = float(spec.f(inp.t, x, a)[0])
    value = -float(b @ inp.p) - 0.5 * float(np.trace(s @ s.T @ inp.A)) - f
    if not np.isfinite(value):
        raise SpecError(f"Hamiltonian is not finite at t={inp.t}, x={inp.x.tolist()}, control {a}")
    return value


def hamiltonian_min(spec: ProblemSpec, inp: HamiltonianInput) -> tuple[float, int]:
    """Minimum over the control list; ties go to the lowest index."""
    values = [hamiltonian_a(spec, inp, a) for a in range(spec.n_controls)]
    k = int(np.argmin(values))
    return values[k], k
