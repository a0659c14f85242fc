"""Exact discrete controller-and-stopper games on a controlled Markov chain.

The chain uses upwind trinomial stencils (five-point in two dimensions), the
same weights the explicit grid scheme uses, so the lattice value is an exact
discrete game value with which the PDE solution can be compared. Backward
induction is run in both move orders (stopper first / controller first); the
two must coincide. Two brute-force evaluators enumerate the game tree
directly for tiny instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MeshRejected, OrderingMismatch
from .hjb_solver import GridGeometry
from .model import ProblemSpec

__all__ = [
    "LatticeMesh",
    "LatticeGame",
    "ValueTable",
    "build_chain",
    "backward_induction",
    "oracle_value",
    "game_tree_value",
    "enumerate_strategies_value",
    "random_game",
]

STOPPER_FIRST = "stopper-first"
CONTROLLER_FIRST = "controller-first"
_ORDERINGS = (STOPPER_FIRST, CONTROLLER_FIRST)
_PROB_TOL = 1e-12


@dataclass(frozen=True)
class LatticeMesh:
    geometry: GridGeometry
    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_steps < 1 or not self.horizon > 0:
            raise ValueError("need n_steps >= 1 and a positive horizon")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @classmethod
    def matched(cls, spec: ProblemSpec, geometry: GridGeometry, safety: float = 1.0) -> "LatticeMesh":
        """Fewest uniform steps for which every trinomial weight is nonnegative."""
        dt = _max_weight_dt(spec, geometry) * safety
        n = max(1, int(math.ceil(spec.horizon / dt - 1e-9)))
        return cls(geometry, n, spec.horizon)


def _max_weight_dt(spec: ProblemSpec, geometry: GridGeometry) -> float:
    nodes = geometry.nodes()
    dx = geometry.dx
    times = np.linspace(0.0, spec.horizon, 21) if spec.time_dependent else [0.0]
    worst = 0.0
    for t in times:
        for k in range(spec.n_controls):
            s = spec.sigma(t, nodes, k)
            cov = np.einsum("...ii->...i", np.einsum("...ij,...kj->...ik", s, s))
            b = spec.b(t, nodes, k)
            worst = max(worst, float((cov / dx**2 + np.abs(b) / dx).sum(axis=-1).max()))
    return spec.horizon if worst <= 0 else 1.0 / worst


@dataclass
class LatticeGame:
    """A finite controlled chain with stopping.

    ``weights[n, i, a, s]`` is the probability of moving from node ``i`` to
    ``neighbors[i, s]`` under control ``a`` during step ``n`` (the leading axis
    has length 1 for time-homogeneous games). ``step_cost`` is ``dt * f`` and
    ``discount`` is ``exp(-c dt)``.
    """

    times: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray
    step_cost: np.ndarray
    discount: np.ndarray
    obstacle: np.ndarray
    absorbing: np.ndarray
    geometry: GridGeometry | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_nodes = self.obstacle.shape[0]
        if self.neighbors.shape[0] != n_nodes or self.weights.shape[1] != n_nodes:
            raise ValueError("inconsistent node counts")
        if self.weights.shape[0] not in (1, self.n_steps):
            raise ValueError("weights need a leading axis of length 1 or n_steps")
        if self.weights.min() < -_PROB_TOL:
            raise MeshRejected("negative transition probability")
        sums = self.weights.sum(axis=-1)
        if np.abs(sums - 1.0).max() > _PROB_TOL:
            raise MeshRejected(f"transition probabilities do not sum to 1 (max error {np.abs(sums - 1).max():.3g})")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def n_nodes(self) -> int:
        return self.obstacle.shape[0]

    @property
    def n_controls(self) -> int:
        return self.weights.shape[2]

    def step(self, n: int):
        j = 0 if self.weights.shape[0] == 1 else n
        jc = 0 if self.step_cost.shape[0] == 1 else n
        jd = 0 if self.discount.shape[0] == 1 else n
        return self.weights[j], self.step_cost[jc], self.discount[jd]


def build_chain(spec: ProblemSpec, mesh: LatticeMesh) -> LatticeGame:
    """Upwind chain ``p_+- = a dt / (2 dx^2) + max(+-b, 0) dt / dx`` per axis, ``p_0 = 1 - sum``.

    Coefficients for step ``n`` are frozen at ``t_n``; boundary nodes absorb
    with payoff ``g``.
    """
    geom = mesh.geometry
    if geom.dim != spec.dim:
        raise ValueError("mesh and spec dimensions differ")
    d = geom.dim
    shape = geom.shape
    n_nodes = int(np.prod(shape))
    nodes = geom.nodes().reshape(n_nodes, d)
    flat = np.arange(n_nodes).reshape(shape)
    boundary = geom.boundary_mask().reshape(n_nodes)
    dx = geom.dx
    dt = mesh.dt

    S = 1 + 2 * d
    neighbors = np.repeat(np.arange(n_nodes)[:, None], S, axis=1)
    for ax in range(d):
        for j, s in enumerate((1, -1)):
            shifted = np.roll(flat, -s, axis=ax).reshape(n_nodes)
            neighbors[:, 1 + 2 * ax + j] = np.where(boundary, np.arange(n_nodes), shifted)

    times = mesh.times
    eval_times = times[:-1] if spec.time_dependent else times[:1]
    W = np.empty((len(eval_times), n_nodes, spec.n_controls, S))
    C = np.empty((len(eval_times), n_nodes, spec.n_controls))
    D = np.empty((len(eval_times), n_nodes))
    for n, t in enumerate(eval_times):
        D[n] = np.exp(-spec.c(t, nodes) * dt)
        for k in range(spec.n_controls):
            b = spec.b(t, nodes, k)
            s = spec.sigma(t, nodes, k)
            cov = np.einsum("nij,nkj->nik", s, s)
            if d > 1:
                off = cov - np.einsum("nii->ni", cov)[..., None] * np.eye(d)
                if np.abs(off).max() > 1e-12:
                    raise MeshRejected("correlated diffusion is not representable by the axis stencil")
            var = np.einsum("nii->ni", cov)
            p = np.zeros((n_nodes, S))
            for ax in range(d):
                p[:, 1 + 2 * ax] = var[:, ax] * dt / (2 * dx[ax] ** 2) + np.maximum(b[:, ax], 0) * dt / dx[ax]
                p[:, 2 + 2 * ax] = var[:, ax] * dt / (2 * dx[ax] ** 2) + np.maximum(-b[:, ax], 0) * dt / dx[ax]
            p[:, 0] = 1.0 - p[:, 1:].sum(axis=1)
            p[boundary] = 0.0
            p[boundary, 0] = 1.0
            if p[:, 0].min() < -_PROB_TOL:
                i = int(np.argmin(p[:, 0]))
                raise MeshRejected(
                    f"negative stay weight {p[i, 0]:.3g} at node {np.unravel_index(i, shape)} "
                    f"(x={nodes[i].tolist()}), control {k}, t={t:.6g}; refine dt"
                )
            p[:, 0] = np.maximum(p[:, 0], 0.0)
            W[n, :, k] = p
            C[n, :, k] = dt * spec.f(t, nodes, k)
    g = spec.g(nodes)
    return LatticeGame(times, neighbors, W, C, D, g, boundary, geom,
                       {"dt": dt, "dx": [float(v) for v in dx]})


@dataclass
class ValueTable:
    """Values (and argmax controls) for the kept time steps, indexed by step."""

    times: np.ndarray
    steps: np.ndarray
    values: np.ndarray  # (len(steps), n_nodes)
    policy: np.ndarray  # (len(steps), n_nodes)

    def at(self, step: int) -> np.ndarray:
        hits = np.flatnonzero(self.steps == step)
        if not hits.size:
            raise KeyError(f"step {step} was not kept")
        return self.values[hits[0]]

    def policy_at(self, step: int) -> np.ndarray:
        return self.policy[int(np.flatnonzero(self.steps == step)[0])]


def _stacked_operator(game: LatticeGame, n: int) -> sp.csr_matrix:
    """Sparse ``(n_controls * n_nodes, n_nodes)`` matrix; row ``a * n_nodes + i`` is the law of the next node."""
    W = game.step(n)[0]
    n_nodes, m, S = W.shape
    rows = np.repeat(np.arange(m * n_nodes), S)
    cols = np.tile(game.neighbors, (m, 1)).reshape(-1)
    vals = W.transpose(1, 0, 2).reshape(-1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m * n_nodes, n_nodes))


def backward_induction(game: LatticeGame, ordering: str = STOPPER_FIRST,
                       keep: Sequence[int] | None = None) -> ValueTable:
    """``stopper-first``: ``w = min(g, max_a cont_a)``; ``controller-first``: ``w = max_a min(g, cont_a)``.

    ``cont_a = disc * (dt f_a + sum_s p_s w_next(neighbor_s))``. ``keep``
    restricts the stored steps (default: all).
    """
    if ordering not in _ORDERINGS:
        raise ValueError(f"ordering must be one of {_ORDERINGS}")
    N = game.n_steps
    m, n_nodes = game.n_controls, game.n_nodes
    keep_set = set(range(N + 1)) if keep is None else {int(k) for k in keep}
    g = game.obstacle
    w = g.copy()
    stored: dict[int, tuple] = {}
    if N in keep_set:
        stored[N] = (w.copy(), np.zeros(n_nodes, dtype=np.int64))
    absorb = np.flatnonzero(game.absorbing)
    homogeneous = game.weights.shape[0] == 1
    P = _stacked_operator(game, 0) if homogeneous else None
    for n in range(N - 1, -1, -1):
        _, C, D = game.step(n)
        if not homogeneous:
            P = _stacked_operator(game, n)
        cont = (P @ w).reshape(m, n_nodes)
        cont += C.T
        cont *= D
        if ordering == CONTROLLER_FIRST:
            np.minimum(cont, g, out=cont)
        best = cont[0].copy()
        for a in range(1, m):
            np.maximum(best, cont[a], out=best)
        w = np.minimum(g, best) if ordering == STOPPER_FIRST else best
        w[absorb] = g[absorb]
        if n in keep_set:
            stored[n] = (w.copy(), np.argmax(cont, axis=0))
    steps = np.array(sorted(stored), dtype=np.int64)
    values = np.array([stored[s][0] for s in steps]).reshape(len(steps), n_nodes)
    policy = np.array([stored[s][1] for s in steps]).reshape(len(steps), n_nodes)
    return ValueTable(game.times, steps, values, policy)


def _locate(game: LatticeGame, t: float, x) -> tuple[int, int]:
    steps = np.flatnonzero(np.abs(game.times - t) <= 1e-9 * max(1.0, game.times[-1]))
    if not steps.size:
        raise ValueError(f"probe time {t} is not on the lattice time grid")
    geom = game.geometry
    x = np.atleast_1d(np.asarray(x, dtype=float))
    idx = geom.nearest_index(x)
    node_x = np.array([ax[i[0]] for ax, i in zip(geom.axes(), idx)])
    if np.abs(node_x - x).max() > 1e-9:
        raise ValueError(f"probe x={x.tolist()} is not a lattice node")
    return int(steps[0]), int(np.ravel_multi_index(tuple(i[0] for i in idx), geom.shape))


def oracle_value(spec: ProblemSpec, mesh: LatticeMesh, probes: Sequence) -> list[tuple[float, tuple, float]]:
    """Common value of both move orders at ``(t, x)`` probes on the lattice."""
    game = build_chain(spec, mesh)
    located = [(float(t), tuple(np.atleast_1d(np.asarray(x, dtype=float)).tolist()),
                *_locate(game, float(t), x)) for t, x in probes]
    keep = sorted({s for *_, s, _ in located})
    upper = backward_induction(game, STOPPER_FIRST, keep)
    lower = backward_induction(game, CONTROLLER_FIRST, keep)
    gap = float(np.abs(upper.values - lower.values).max())
    if gap > 1e-12:
        raise OrderingMismatch(f"stopper-first and controller-first values differ by {gap:.3g}")
    return [(t, x, float(upper.at(s)[i])) for t, x, s, i in located]


# ---------------------------------------------------------------------------
# Brute-force evaluators for tiny games
# ---------------------------------------------------------------------------


def game_tree_value(game: LatticeGame, start_node: int, ordering: str = STOPPER_FIRST,
                    start_step: int = 0) -> float:
    """Evaluate the game on the full history tree, carrying the Mayer pair ``(y, z)``.

    Every history is expanded separately (no aggregation by node) and the
    payoff of a stop is ``z + y g``. In the stopper-first game the stop
    decision at a history precedes the controller's move there; in the
    controller-first game the controller's move is known to the stopper.
    """
    if ordering not in _ORDERINGS:
        raise ValueError(f"ordering must be one of {_ORDERINGS}")
    N = game.n_steps
    g = game.obstacle

    def rec(step: int, node: int, y: float, z: float) -> float:
        stop = z + y * g[node]
        if step == N or game.absorbing[node]:
            return stop
        W, C, D = game.step(step)
        y_next = y * D[node]
        options = []
        for a in range(game.n_controls):
            z_next = z + y_next * C[node, a]
            total = 0.0
            for s, nb in enumerate(game.neighbors[node]):
                p = W[node, a, s]
                if p > 0.0:
                    total += p * rec(step + 1, int(nb), y_next, z_next)
            options.append(total)
        if ordering == STOPPER_FIRST:
            return min(stop, max(options))
        return max(min(stop, o) for o in options)

    return rec(start_step, int(start_node), 1.0, 0.0)


def _transition_dense(game: LatticeGame, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    W, C, D = game.step(n)
    P = np.zeros((game.n_nodes, game.n_controls, game.n_nodes))
    for i in range(game.n_nodes):
        for s, j in enumerate(game.neighbors[i]):
            P[i, :, j] += W[i, :, s]
    return P, C, D


def enumerate_strategies_value(game: LatticeGame, start_node: int) -> tuple[float, float]:
    """``(U, V)`` by listing every pure control plan and every stop rule (at most 2 steps).

    A control plan fixes ``a_0`` and a feedback map ``node -> a_1``. In ``U``
    the stopper commits to a non-anticipating strategy: a stop flag at step 0
    and a stop flag at step 1 for each observed ``(node_1, a_0)``, i.e. it may
    react to past controls but never to ``a_1``. In ``V`` the stopper knows
    the plan and picks a stopping time (a stop flag per node path).
    """
    N = game.n_steps
    if N > 2 or game.absorbing.any():
        raise ValueError("literal enumeration supports at most 2 steps and no absorbing nodes")
    n, m = game.n_nodes, game.n_controls
    g = game.obstacle
    P0, C0, D0 = _transition_dense(game, 0)
    s0 = int(start_node)

    if N == 1:
        plans = [(a0, ()) for a0 in range(m)]
    else:
        P1, C1, D1 = _transition_dense(game, 1)
        plans = [(a0, a1) for a0 in range(m) for a1 in itertools.product(range(m), repeat=n)]

    def payoff(plan, stop0: bool, stop1) -> float:
        # stop1(node1, a0) -> bool
        if stop0:
            return g[s0]
        a0, a1 = plan
        y1 = D0[s0]
        z1 = y1 * C0[s0, a0]
        total = 0.0
        for j in range(n):
            p = P0[s0, a0, j]
            if p == 0.0:
                continue
            if N == 1 or stop1(j, a0):
                total += p * (z1 + y1 * g[j])
                continue
            y2 = y1 * D1[j]
            z2 = z1 + y2 * C1[j, a1[j]]
            total += p * sum(P1[j, a1[j], k] * (z2 + y2 * g[k]) for k in range(n))
        return total

    # U = inf over non-anticipating strategies of sup over plans
    info = [(j, a0) for j in range(n) for a0 in range(m)] if N == 2 else []
    best_u = g[s0]  # the strategy that stops immediately
    for flags in itertools.product((False, True), repeat=len(info)):
        table = dict(zip(info, flags))
        worst = max(payoff(plan, False, lambda j, a0: table[(j, a0)]) for plan in plans)
        best_u = min(best_u, worst)

    # V = sup over plans of inf over stopping times (functions of the node path)
    best_v = -math.inf
    for plan in plans:
        inner = g[s0]
        for flags in itertools.product((False, True), repeat=n if N == 2 else 0):
            inner = min(inner, payoff(plan, False, lambda j, a0: flags[j]))
        best_v = max(best_v, inner)
    return float(best_u), float(best_v)


def random_game(rng: np.random.Generator, n_nodes: int, n_controls: int, n_steps: int,
                *, absorbing: bool = False, dt: float = 0.1) -> LatticeGame:
    """Dense random chain (every node reachable in one step) with time-varying data."""
    W = rng.dirichlet(np.ones(n_nodes) * 0.7, size=(n_steps, n_nodes, n_controls))
    # sparsify some moves so that zero-probability branches are exercised
    mask = rng.random(W.shape) < 0.25
    mask[..., 0] = False
    W = np.where(mask, 0.0, W)
    W /= W.sum(axis=-1, keepdims=True)
    C = dt * rng.uniform(0.0, 1.0, (n_steps, n_nodes, n_controls))
    D = np.exp(-dt * rng.uniform(0.0, 1.0, (n_steps, n_nodes)))
    g = rng.uniform(0.0, 2.0, n_nodes)
    absorb = (rng.random(n_nodes) < 0.2) if absorbing else np.zeros(n_nodes, dtype=bool)
    neighbors = np.tile(np.arange(n_nodes), (n_nodes, 1))
    times = np.linspace(0.0, dt * n_steps, n_steps + 1)
    return LatticeGame(times, neighbors, W, C, D, g, absorb)
