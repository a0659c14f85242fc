"""Stopping strategies, feedback controls and Monte Carlo checks of the game value.

A stopping strategy decides at each simulation step whether to stop, looking
only at the current state and the controls used on earlier steps. The
``value-threshold`` rule built from a solved grid is the Snell-envelope rule
(stop once the value meets the obstacle); together with the grid's argmin
feedback control it forms the epsilon-saddle candidate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hjb_solver import GridGeometry, ValueGrid, solve
from .model import ProblemSpec
from .sde_sim import ControlPolicy, iterate, simulate

__all__ = [
    "StoppingStrategy",
    "snell_stop_rule",
    "constant_time",
    "boundary_hit",
    "control_count",
    "feedback_policy",
    "random_feedback_policy",
    "random_stopping_strategy",
    "default_adversaries",
    "PairResult",
    "evaluate_pair",
    "SandwichEntry",
    "SandwichReport",
    "sandwich_test",
    "SaddleCandidate",
    "SaddleCertificate",
    "extract_saddle",
    "non_anticipativity_replay",
]

StopRule = Callable[[int, float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StoppingStrategy:
    """``rule(step, t, x, history) -> bool per path``; ``history`` has the controls of steps ``< step``."""

    rule: StopRule
    descriptor: dict

    def decide(self, step: int, t: float, x: np.ndarray, history: np.ndarray) -> np.ndarray:
        out = np.asarray(self.rule(step, t, x, history), dtype=bool)
        return np.broadcast_to(out, (x.shape[0],))


def snell_stop_rule(grid: ValueGrid, stop_tol: float | None = None) -> StoppingStrategy:
    """Stop at the first step where ``w(t, X) >= g(X) - stop_tol``, at ``T``, or off the grid."""
    tol = grid.scheme.stop_tol if stop_tol is None else float(stop_tol)
    spec = grid.spec
    T = spec.horizon

    def rule(step, t, x, history):
        if t >= T - 1e-12:
            return np.ones(x.shape[0], dtype=bool)
        w = grid.value_at(t, x)
        g = spec.g(x)
        return np.isnan(w) | (w >= g - tol)

    return StoppingStrategy(rule, {"kind": "value-threshold", "stop_tol": tol})


def constant_time(t_star: float) -> StoppingStrategy:
    """Stop at the first grid time ``>= t_star``."""
    t_star = float(t_star)

    def rule(step, t, x, history):
        return np.full(x.shape[0], t >= t_star - 1e-12)

    return StoppingStrategy(rule, {"kind": "constant-time", "t": t_star})


def boundary_hit(lower, upper) -> StoppingStrategy:
    """Stop when the state leaves the open box ``(lower, upper)``."""
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))

    def rule(step, t, x, history):
        return np.any((x <= lo) | (x >= hi), axis=1)

    return StoppingStrategy(rule, {"kind": "boundary-hit", "lower": lo.tolist(), "upper": hi.tolist()})


def control_count(control: int, count: int) -> StoppingStrategy:
    """Stop once ``control`` has been used ``count`` times; reacts to the observed control history."""

    def rule(step, t, x, history):
        return (history[:, :step] == control).sum(axis=1) >= count

    return StoppingStrategy(rule, {"kind": "control-count", "control": int(control), "count": int(count)})


def feedback_policy(grid: ValueGrid) -> ControlPolicy:
    """Markov control read off the grid's argmin table (nearest node, latest slice <= t)."""

    def policy(step, t, x, history):
        return grid.control_at(t, x)

    policy.descriptor = {"kind": "grid-feedback"}
    return policy


def random_feedback_policy(spec: ProblemSpec, seed: int, geometry: GridGeometry,
                           n_time: int = 6, n_space: int = 12) -> ControlPolicy:
    """Piecewise-constant random Markov control on a coarse time x space partition."""
    rng = np.random.default_rng(seed)
    table = rng.integers(0, spec.n_controls, (n_time,) + (n_space,) * spec.dim)
    lo, hi = np.asarray(geometry.x_min), np.asarray(geometry.x_max)

    def policy(step, t, x, history):
        it = min(int(t / spec.horizon * n_time), n_time - 1)
        cell = np.clip(((x - lo) / (hi - lo) * n_space).astype(np.int64), 0, n_space - 1)
        return table[(it,) + tuple(cell[:, k] for k in range(spec.dim))]

    policy.descriptor = {"kind": "random-feedback", "seed": int(seed)}
    return policy


def random_stopping_strategy(spec: ProblemSpec, seed: int, center) -> StoppingStrategy:
    rng = np.random.default_rng(seed)
    kind = rng.integers(0, 3)
    if kind == 0:
        return constant_time(float(rng.uniform(0.0, spec.horizon)))
    if kind == 1:
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return boundary_hit(center - rng.uniform(0.05, 1.0, center.shape),
                            center + rng.uniform(0.05, 1.0, center.shape))
    return control_count(int(rng.integers(0, spec.n_controls)), int(rng.integers(1, 40)))


def default_adversaries(spec: ProblemSpec, geometry: GridGeometry, start, count: int, seed: int):
    """``count`` random controls and ``count`` random stopping strategies from fixed seed offsets."""
    controls = [random_feedback_policy(spec, seed + 100 + i, geometry) for i in range(count)]
    stops = [random_stopping_strategy(spec, seed + 200 + i, start) for i in range(count)]
    return controls, stops


# ---------------------------------------------------------------------------
# Monte Carlo evaluation
# ---------------------------------------------------------------------------


@dataclass
class PairResult:
    value: float
    stderr: float
    payoffs: np.ndarray = field(repr=False)
    stop_steps: np.ndarray = field(repr=False)
    stop_times: np.ndarray = field(repr=False)

    def __iter__(self):
        # (mc_value, stderr) unpacking
        yield self.value
        yield self.stderr


def _stderr(samples: np.ndarray) -> float:
    n = samples.size
    return float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def evaluate_pair(spec: ProblemSpec, start, control_policy: ControlPolicy, strategy: StoppingStrategy,
                  n_paths: int, n_steps: int, seed: int, *, start_time: float = 0.0) -> PairResult:
    """Sample mean and standard error of ``F = Z_tau + Y_tau g(X_tau)`` for the given pair."""
    grid = np.linspace(start_time, spec.horizon, n_steps + 1)
    start = np.atleast_1d(np.asarray(start, dtype=float))
    pay = np.zeros(n_paths)
    stop_step = np.full(n_paths, -1, dtype=np.int64)
    active = np.ones(n_paths, dtype=bool)

    for step, t, x, y, z, history in iterate(spec, grid, start, control_policy, n_paths, seed):
        if step == n_steps:
            now = active
        else:
            now = active & strategy.decide(step, t, x, history)
        if now.any():
            pay[now] = z[now] + y[now] * spec.g(x[now])
            stop_step[now] = step
            active &= ~now
        if not active.any():
            break
    return PairResult(float(pay.mean()), _stderr(pay), pay, stop_step, grid[stop_step])


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class SandwichEntry:
    side: str  # lower: grid control vs adversary stopper; upper: adversary control vs snell rule
    adversary: dict
    mc_value: float
    stderr: float
    tolerance: float
    margin: float

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance

    def to_dict(self) -> dict:
        return {"side": self.side, "adversary": self.adversary, "mc_value": self.mc_value,
                "stderr": self.stderr, "tolerance": self.tolerance, "margin": self.margin,
                "passed": self.passed}


@dataclass
class SandwichReport:
    start: list
    value: float
    scheme_tolerance: float
    n_paths: int
    n_steps: int
    seed: int
    entries: list[SandwichEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {"start": self.start, "value": self.value, "scheme_tolerance": self.scheme_tolerance,
                "n_paths": self.n_paths, "n_steps": self.n_steps, "seed": self.seed,
                "passed": self.passed, "entries": [e.to_dict() for e in self.entries]}


def _descriptor(obj) -> dict:
    return dict(getattr(obj, "descriptor", {"kind": "custom"}))


def sandwich_test(spec: ProblemSpec, grid: ValueGrid, adversary_controls: Sequence[ControlPolicy],
                  adversary_strategies: Sequence[StoppingStrategy], n_paths: int, seed: int, *,
                  start, n_steps: int = 200, scheme_tolerance: float = 5e-2,
                  threads: int = 1) -> SandwichReport:
    """Check that neither player can push the Monte Carlo payoff across the grid value.

    lower: ``mc(grid control, adversary stopper) >= w - tol``;
    upper: ``mc(adversary control, snell rule) <= w + tol``; ``tol = 3 stderr + scheme_tolerance``.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    w0 = float(grid.value_at(0.0, start[None])[0])
    control = feedback_policy(grid)
    snell = snell_stop_rule(grid)
    jobs = [("lower", control, s, _descriptor(s)) for s in adversary_strategies]
    jobs += [("upper", c, snell, _descriptor(c)) for c in adversary_controls]

    def run(job):
        side, pol, strat, desc = job
        res = evaluate_pair(spec, start, pol, strat, n_paths, n_steps, seed)
        tol = 3.0 * res.stderr + scheme_tolerance
        margin = res.value - w0 if side == "lower" else w0 - res.value
        return SandwichEntry(side, desc, res.value, res.stderr, tol, margin)

    entries = _map(run, jobs, threads)
    return SandwichReport(start.tolist(), w0, scheme_tolerance, n_paths, n_steps, seed, entries)


# ---------------------------------------------------------------------------
# epsilon-saddle
# ---------------------------------------------------------------------------


@dataclass
class SaddleCandidate:
    control_policy: ControlPolicy
    strategy: StoppingStrategy
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class SaddleCertificate:
    candidate: SaddleCandidate
    grid: ValueGrid
    start: list
    central_value: float
    central_stderr: float
    entries: list[SandwichEntry]
    refined: bool

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def violations(self) -> list[SandwichEntry]:
        return [e for e in self.entries if not e.passed]

    def to_dict(self) -> dict:
        return {"start": self.start, "epsilon": self.candidate.epsilon,
                "grid_value": float(self.grid.value_at(0.0, np.atleast_2d(self.start))[0]),
                "central_value": self.central_value, "central_stderr": self.central_stderr,
                "mesh": self.grid.geometry.to_dict(), "refined": self.refined,
                "passed": self.passed, "entries": [e.to_dict() for e in self.entries]}


def _certify(spec, grid, epsilon, start, k, n_paths, n_steps, seed, threads) -> SaddleCertificate:
    control = feedback_policy(grid)
    snell = snell_stop_rule(grid)
    central = evaluate_pair(spec, start, control, snell, n_paths, n_steps, seed)
    controls = [random_feedback_policy(spec, seed + 1000 + i, grid.geometry) for i in range(k)]
    stops = [random_stopping_strategy(spec, seed + 2000 + i, start) for i in range(k)]
    jobs = [("controller-deviation", c, snell) for c in controls]
    jobs += [("stopper-deviation", control, s) for s in stops]

    def run(job):
        side, pol, strat = job
        res = evaluate_pair(spec, start, pol, strat, n_paths, n_steps, seed)
        diff = res.payoffs - central.payoffs  # common random numbers
        se = _stderr(diff)
        if side == "controller-deviation":
            # E F(alpha, pi*[alpha]) - eps <= E F(alpha*, pi*[alpha*])
            margin = central.value - res.value
            desc = _descriptor(pol)
        else:
            # E F(alpha*, pi*[alpha*]) <= E F(alpha*, pi[alpha*])
            margin = res.value - central.value
            desc = _descriptor(strat)
        return SandwichEntry(side, desc, res.value, se, epsilon + 3.0 * se, margin)

    entries = _map(run, jobs, threads)
    cand = SaddleCandidate(control, snell, epsilon)
    return SaddleCertificate(cand, grid, start.tolist(), central.value, central.stderr, entries, False)


def extract_saddle(spec: ProblemSpec, grid: ValueGrid, epsilon: float, *, start, k: int = 5,
                   n_paths: int = 100_000, n_steps: int = 200, seed: int = 0,
                   refine_on_failure: bool = True, threads: int = 1) -> SaddleCertificate:
    """Grid feedback control plus the snell rule, certified against ``k`` random deviations per player.

    On failure the mesh is refined once by a factor 2 and the certificate is
    recomputed; a second failure is returned as a failing certificate.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    start = np.atleast_1d(np.asarray(start, dtype=float))
    cert = _certify(spec, grid, epsilon, start, k, n_paths, n_steps, seed, threads)
    if cert.passed or not refine_on_failure:
        return cert
    finer = solve(spec, grid.scheme, grid.geometry.refine(2))
    cert = _certify(spec, finer, epsilon, start, k, n_paths, n_steps, seed, threads)
    cert.refined = True
    return cert


# ---------------------------------------------------------------------------
# Non-anticipativity
# ---------------------------------------------------------------------------


def non_anticipativity_replay(spec: ProblemSpec, strategy: StoppingStrategy, start, *,
                              n_pairs: int = 100, n_steps: int = 40, seed: int = 0) -> int:
    """Replay control-sequence pairs that agree before a random step ``k``.

    Both sequences are driven by the same noise; the strategy's decisions on
    steps ``0..k`` must coincide, and must not change when the full (future)
    control history is appended. Returns the number of divergent decisions.
    """
    rng = np.random.default_rng(seed)
    m = spec.n_controls
    alpha = rng.integers(0, m, (n_pairs, n_steps))
    split = rng.integers(0, n_steps, n_pairs)
    beta = alpha.copy()
    for i, k in enumerate(split):
        tail = rng.integers(0, m, n_steps - k)
        if m > 1:
            tail[0] = (alpha[i, k] + 1 + rng.integers(0, m - 1)) % m
        beta[i, k:] = tail
    normals = np.random.default_rng(seed + 1).standard_normal((n_steps, n_pairs, spec.dim))

    def open_loop(seq):
        def policy(step, t, x, history):
            return seq[:, step]
        return policy

    start = np.atleast_1d(np.asarray(start, dtype=float))
    a = simulate(spec, 0.0, start, open_loop(alpha), n_pairs, n_steps, seed, normals=normals)
    b = simulate(spec, 0.0, start, open_loop(beta), n_pairs, n_steps, seed, normals=normals)
    divergences = 0
    for step in range(n_steps + 1):
        t = float(a.time_grid[step])
        da = strategy.decide(step, t, a.x[:, step], a.controls[:, :step])
        db = strategy.decide(step, t, b.x[:, step], b.controls[:, :step])
        full = strategy.decide(step, t, a.x[:, step], a.controls)
        upto = step <= split
        divergences += int(np.sum(upto & (da != db)))
        divergences += int(np.sum(da != full))
    return divergences
