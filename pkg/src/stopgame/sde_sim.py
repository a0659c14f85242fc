"""Euler-Maruyama simulation of the controlled state and its Mayer augmentation.

The augmented state is ``(X, Y, Z)``: ``X`` follows the controlled SDE, ``Y``
is the running discount factor and ``Z`` the discounted running cost accrued so
far, so that stopping at ``tau`` pays ``F = Z_tau + Y_tau * g(X_tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import SimulationError
from .model import ProblemSpec

__all__ = [
    "AugmentedState",
    "PathBundle",
    "ControlPolicy",
    "constant_policy",
    "normal_stream",
    "simulate",
    "payoff",
    "moment_scaling_diagnostic",
]

# policy(step, t, x, history) -> control index per path.
# x has shape (n_paths, d); history holds the controls used on earlier steps,
# shape (n_paths, step).
ControlPolicy = Callable[[int, float, np.ndarray, np.ndarray], np.ndarray]


def constant_policy(index: int) -> ControlPolicy:
    def policy(step, t, x, history):
        return np.full(x.shape[0], index, dtype=np.int64)

    policy.descriptor = {"kind": "constant", "control": int(index)}
    return policy


@dataclass(frozen=True)
class AugmentedState:
    x: np.ndarray
    y: float
    z: float

    def __post_init__(self):
        if self.y < 0 or self.z < 0:
            raise ValueError("augmented state needs y >= 0 and z >= 0")


@dataclass
class PathBundle:
    spec: ProblemSpec
    time_grid: np.ndarray  # (n_steps + 1,)
    x: np.ndarray  # (n_paths, n_steps + 1, d)
    y: np.ndarray  # (n_paths, n_steps + 1)
    z: np.ndarray  # (n_paths, n_steps + 1)
    controls: np.ndarray  # (n_paths, n_steps), index into spec.controls
    seed: int

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.controls.shape[1]

    def state(self, path: int, step: int) -> AugmentedState:
        return AugmentedState(self.x[path, step].copy(), float(self.y[path, step]), float(self.z[path, step]))


def normal_stream(seed: int) -> np.random.Generator:
    """Counter-based generator; draws are consumed step-major, one ``(n_paths, d)`` block per step."""
    return np.random.Generator(np.random.Philox(key=seed))


def _time_grid(spec, start_time, n_steps, end_time) -> np.ndarray:
    end = spec.horizon if end_time is None else float(end_time)
    if not (0.0 <= start_time < end <= spec.horizon + 1e-12):
        raise ValueError(f"need 0 <= start_time < end_time <= T, got {start_time}, {end}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return np.linspace(start_time, end, n_steps + 1)


def advance(spec: ProblemSpec, t: float, dt: float, x: np.ndarray, y: np.ndarray,
            z: np.ndarray, a: np.ndarray, dw: np.ndarray):
    """One Euler step for X, exact exponential step for Y, left-point rule for Z."""
    drift = np.empty_like(x)
    vol = np.empty_like(x)
    f = np.empty_like(y)
    for k in np.unique(a):
        sel = a == k
        xs = x[sel]
        drift[sel] = spec.b(t, xs, int(k))
        vol[sel] = np.einsum("nij,nj->ni", spec.sigma(t, xs, int(k)), dw[sel])
        f[sel] = spec.f(t, xs, int(k))
    c = spec.c(t, x)
    x_new = x + drift * dt + vol
    y_new = y * np.exp(-c * dt)
    z_new = z + y * f * dt
    return x_new, y_new, z_new


def _check_step(step: int, x_new, y, y_new, z, z_new) -> None:
    bad = ~np.isfinite(x_new).all(axis=1) | ~np.isfinite(y_new) | ~np.isfinite(z_new)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SimulationError(
            f"non-finite state on path {i} at step {step + 1}: x={x_new[i].tolist()}, "
            f"y={float(y_new[i])}, z={float(z_new[i])}"
        )
    if (y_new > y).any() or (z_new < z).any():
        i = int(np.flatnonzero((y_new > y) | (z_new < z))[0])
        raise SimulationError(
            f"Mayer monotonicity broken on path {i} at step {step + 1} "
            "(negative discount rate or running cost)"
        )


def iterate(spec: ProblemSpec, time_grid: np.ndarray, x0: np.ndarray, policy: ControlPolicy,
            n_paths: int, seed: int, *, y0: float = 1.0, z0: float = 0.0,
            normals: np.ndarray | None = None) -> Iterator[tuple]:
    """Yield ``(step, t, x, y, z, history)`` at every grid time, advancing in between.

    The control for interval ``step`` is chosen by ``policy`` after the yield,
    so a consumer that inspects the state (e.g. a stopping rule) sees exactly
    what a non-anticipating player would see.
    """
    d = spec.dim
    n_steps = len(time_grid) - 1
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(d), (n_paths, d)).copy()
    y = np.full(n_paths, float(y0))
    z = np.full(n_paths, float(z0))
    history = np.zeros((n_paths, n_steps), dtype=np.int64)
    rng = None if normals is not None else normal_stream(seed)
    for step in range(n_steps + 1):
        t = float(time_grid[step])
        yield step, t, x, y, z, history[:, :step]
        if step == n_steps:
            return
        a = np.asarray(policy(step, t, x, history[:, :step]), dtype=np.int64)
        if a.shape != (n_paths,) or a.min() < 0 or a.max() >= spec.n_controls:
            raise ValueError(f"policy returned invalid control indices at step {step}")
        history[:, step] = a
        dt = float(time_grid[step + 1] - time_grid[step])
        eps = normals[step] if normals is not None else rng.standard_normal((n_paths, d))
        x_new, y_new, z_new = advance(spec, t, dt, x, y, z, a, np.sqrt(dt) * eps)
        _check_step(step, x_new, y, y_new, z, z_new)
        x, y, z = x_new, y_new, z_new


def simulate(spec: ProblemSpec, start_time: float, start_state, policy: ControlPolicy,
             n_paths: int, n_steps: int, seed: int, *, end_time: float | None = None,
             time_grid: Sequence[float] | None = None, normals: np.ndarray | None = None,
             ) -> PathBundle:
    """Simulate ``n_paths`` augmented paths from ``(start_time, x, y, z)``.

    ``start_state`` is either a state vector (then ``y=1, z=0``) or an
    :class:`AugmentedState`. ``normals`` optionally supplies the standard
    normal draws, shape ``(n_steps, n_paths, d)``; otherwise they come from
    :func:`normal_stream` with ``seed``. ``time_grid`` overrides
    ``start_time``/``n_steps``/``end_time``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if time_grid is None:
        grid = _time_grid(spec, float(start_time), int(n_steps), end_time)
    else:
        grid = np.asarray(time_grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("time_grid must be strictly increasing with at least two points")
    if isinstance(start_state, AugmentedState):
        x0, y0, z0 = start_state.x, start_state.y, start_state.z
    else:
        x0, y0, z0 = start_state, 1.0, 0.0
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (spec.dim,):
        raise ValueError(f"start state must have {spec.dim} components")
    n = len(grid) - 1
    if normals is not None:
        normals = np.asarray(normals, dtype=float)
        if normals.shape != (n, n_paths, spec.dim):
            raise ValueError(f"normals must have shape {(n, n_paths, spec.dim)}")

    xs = np.empty((n_paths, n + 1, spec.dim))
    ys = np.empty((n_paths, n + 1))
    zs = np.empty((n_paths, n + 1))
    history = None
    for step, _, x, y, z, history in iterate(spec, grid, x0, policy, n_paths, seed,
                                              y0=y0, z0=z0, normals=normals):
        xs[:, step], ys[:, step], zs[:, step] = x, y, z
    return PathBundle(spec, grid, xs, ys, zs, history.copy(), seed)


def payoff(bundle: PathBundle, stop_index) -> np.ndarray:
    """``F = Z + Y g(X)`` at each path's stopping index."""
    idx = np.broadcast_to(np.asarray(stop_index, dtype=np.int64), (bundle.n_paths,))
    if idx.min() < 0 or idx.max() > bundle.n_steps:
        raise IndexError("stop_index outside the time grid")
    rows = np.arange(bundle.n_paths)
    x = bundle.x[rows, idx]
    return bundle.z[rows, idx] + bundle.y[rows, idx] * bundle.spec.g(x)


def moment_scaling_diagnostic(spec: ProblemSpec, x, p: float, h_list: Sequence[float],
                              n_paths: int, seed: int, *, t: float = 0.0, n_substeps: int = 64,
                              policy: ControlPolicy | None = None) -> list[tuple[float, float]]:
    """Monte Carlo estimates of ``E sup_{s <= t+h} |X_s - x|^p`` for each ``h``.

    Every horizon uses the same number of Euler substeps, so the discrete
    supremum has the same relative resolution across ``h``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    policy = policy or constant_policy(0)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = []
    for i, h in enumerate(h_list):
        if not 0 < h <= spec.horizon - t + 1e-12:
            raise ValueError(f"h={h} outside (0, T - t]")
        grid = _time_grid(spec, t, n_substeps, t + h)
        sup = np.zeros(n_paths)
        for _, _, xs, _, _, _ in iterate(spec, grid, x, policy, n_paths, seed + i):
            np.maximum(sup, np.linalg.norm(xs - x, axis=1), out=sup)
        out.append((float(h), float(np.mean(sup ** p))))
    return out
