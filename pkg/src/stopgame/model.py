"""Game instances: coefficients, costs, validation and the benchmark gallery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SpecError
from .expressions import Expr

__all__ = [
    "ProblemSpec",
    "Violation",
    "ValidationReport",
    "BenchmarkCase",
    "validate_spec",
    "builtin_benchmarks",
    "get_benchmark",
]


def _as_expr(value) -> Expr:
    return value if isinstance(value, Expr) else Expr(value)


def _vector(value, dim: int, name: str) -> tuple[Expr, ...]:
    if isinstance(value, (str, int, float, Expr)):
        if dim != 1:
            raise SpecError(f"{name}: expected a list of {dim} expressions")
        value = [value]
    out = tuple(_as_expr(v) for v in value)
    if len(out) != dim:
        raise SpecError(f"{name}: expected {dim} components, got {len(out)}")
    return out


def _matrix(value, dim: int, name: str) -> tuple[tuple[Expr, ...], ...]:
    if isinstance(value, (str, int, float, Expr)):
        if dim != 1:
            raise SpecError(f"{name}: expected a {dim}x{dim} nested list of expressions")
        value = [[value]]
    rows = tuple(tuple(_as_expr(v) for v in row) for row in value)
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise SpecError(f"{name}: expected a {dim}x{dim} matrix")
    return rows


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A complete controller-and-stopper game.

    Coefficients are expressions in ``t``, ``x1..xd`` and ``a1..am``; the
    control set is the finite list ``controls``. ``sample_box`` is the state
    box used by :func:`validate_spec` when drawing sample points.
    """

    dim: int
    horizon: float
    controls: tuple[tuple[float, ...], ...]
    drift: tuple[Expr, ...]
    diffusion: tuple[tuple[Expr, ...], ...]
    running_cost: Expr
    terminal_cost: Expr
    discount: Expr
    discount_bound: float
    lipschitz_K: float
    growth_p: float
    sample_box: tuple[float, float] = (-5.0, 5.0)
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise SpecError(f"dim must be a positive integer, got {self.dim!r}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise SpecError(f"horizon must be positive, got {self.horizon!r}")
        controls = tuple(
            tuple(float(v) for v in (c if isinstance(c, (list, tuple)) else [c]))
            for c in self.controls
        )
        if not controls:
            raise SpecError("controls must be nonempty")
        if len(set(controls)) != len(controls):
            raise SpecError("controls must be duplicate-free")
        if len({len(c) for c in controls}) != 1:
            raise SpecError("all controls must have the same number of components")
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "drift", _vector(self.drift, self.dim, "drift"))
        object.__setattr__(self, "diffusion", _matrix(self.diffusion, self.dim, "diffusion"))
        for name in ("running_cost", "terminal_cost", "discount"):
            object.__setattr__(self, name, _as_expr(getattr(self, name)))
        if not self.discount_bound > 0:
            raise SpecError("discount_bound must be positive")
        if not self.lipschitz_K > 0:
            raise SpecError("lipschitz_K must be positive")
        if not self.growth_p >= 1:
            raise SpecError("growth_p must be >= 1")
        lo, hi = (float(v) for v in self.sample_box)
        if not lo < hi:
            raise SpecError("sample_box must satisfy lo < hi")
        object.__setattr__(self, "sample_box", (lo, hi))
        for e in self.expressions():
            if e.max_state_index() > self.dim:
                raise SpecError(f"{e.source!r} references a state coordinate beyond dim={self.dim}")
            if e.max_control_index() > self.control_dim:
                raise SpecError(f"{e.source!r} references a control component beyond the control size")
        if self.terminal_cost.uses_time or self.terminal_cost.uses_control:
            raise SpecError("terminal_cost may depend on x only")
        if self.discount.uses_control:
            raise SpecError("discount may depend on (t, x) only")

    # -- introspection -------------------------------------------------------

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def control_dim(self) -> int:
        return len(self.controls[0])

    def expressions(self) -> list[Expr]:
        out = list(self.drift)
        out += [e for row in self.diffusion for e in row]
        out += [self.running_cost, self.terminal_cost, self.discount]
        return out

    @property
    def time_dependent(self) -> bool:
        return any(e.uses_time for e in self.expressions())

    # -- pointwise evaluation --------------------------------------------------
    # x has shape (..., d); k is a control index.

    def _control(self, k: int, shape) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.controls[k]), tuple(shape) + (self.control_dim,))

    def b(self, t, x, k: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = self._control(k, x.shape[:-1])
        return np.stack([e(t, x, a) for e in self.drift], axis=-1)

    def sigma(self, t, x, k: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = self._control(k, x.shape[:-1])
        rows = [np.stack([e(t, x, a) for e in row], axis=-1) for row in self.diffusion]
        return np.stack(rows, axis=-2)

    def f(self, t, x, k: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array(self.running_cost(t, x, self._control(k, x.shape[:-1])))

    def g(self, x) -> np.ndarray:
        return np.array(self.terminal_cost(0.0, np.asarray(x, dtype=float)))

    def c(self, t, x) -> np.ndarray:
        return np.array(self.discount(t, np.asarray(x, dtype=float)))

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        def vec(v):
            return [e.source for e in v]

        return {
            "name": self.name,
            "dim": self.dim,
            "horizon": self.horizon,
            "controls": [list(c) for c in self.controls],
            "drift": vec(self.drift),
            "diffusion": [vec(row) for row in self.diffusion],
            "running_cost": self.running_cost.source,
            "terminal_cost": self.terminal_cost.source,
            "discount": self.discount.source,
            "discount_bound": self.discount_bound,
            "lipschitz_K": self.lipschitz_K,
            "growth_p": self.growth_p,
            "sample_box": list(self.sample_box),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        required = (
            "dim", "horizon", "controls", "drift", "diffusion", "running_cost",
            "terminal_cost", "discount", "discount_bound", "lipschitz_K", "growth_p",
        )
        missing = [k for k in required if k not in data]
        if missing:
            raise SpecError(f"problem is missing field(s): {', '.join(missing)}")
        unknown = set(data) - set(required) - {"sample_box", "name"}
        if unknown:
            raise SpecError(f"problem has unknown field(s): {', '.join(sorted(unknown))}")
        kwargs = {k: data[k] for k in required}
        kwargs["horizon"] = float(kwargs["horizon"])
        for k in ("discount_bound", "lipschitz_K", "growth_p"):
            kwargs[k] = float(kwargs[k])
        if "sample_box" in data:
            kwargs["sample_box"] = tuple(data["sample_box"])
        kwargs["name"] = str(data.get("name", ""))
        return cls(**kwargs)

    def replace(self, **changes) -> "ProblemSpec":
        data = self.to_dict()
        for key, value in changes.items():
            if isinstance(value, Expr):
                value = value.source
            data[key] = value
        return ProblemSpec.from_dict(data)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    condition: str  # nonnegativity | discount-bound | lipschitz | linear-growth | polynomial-growth
    function: str
    point: dict
    value: float
    bound: float

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "function": self.function,
            "point": self.point,
            "value": self.value,
            "bound": self.bound,
        }


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    sample_count: int = 0
    rng_seed: int = 0

    @property
    def accepted(self) -> bool:
        return not self.violations

    def conditions(self) -> set[str]:
        return {v.condition for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "sample_count": self.sample_count,
            "rng_seed": self.rng_seed,
            "violations": [v.to_dict() for v in self.violations],
        }


def _point(t=None, x=None, y=None, a=None) -> dict:
    out = {}
    if t is not None:
        out["t"] = float(t)
    if x is not None:
        out["x"] = [float(v) for v in np.atleast_1d(x)]
    if y is not None:
        out["y"] = [float(v) for v in np.atleast_1d(y)]
    if a is not None:
        out["a"] = [float(v) for v in np.atleast_1d(a)]
    return out


def _finite(name: str, values: np.ndarray, t, x, k, spec: ProblemSpec) -> None:
    bad = ~np.isfinite(values)
    if bad.ndim > 1:
        bad = bad.reshape(bad.shape[0], -1).any(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        ti = t[i] if np.ndim(t) else t
        a = spec.controls[k] if k is not None else None
        raise SpecError(f"{name} is not finite at {_point(ti, x[i], a=a)}")


def validate_spec(spec: ProblemSpec, sample_count: int = 1000, rng_seed: int = 0) -> ValidationReport:
    """Check the standing hypotheses on sampled points of ``sample_box``.

    For every condition the worst sampled witness (largest excess over the
    bound) is reported, so the report holds at most one violation per
    (condition, function) pair.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo, hi = spec.sample_box
    n, d = sample_count, spec.dim
    t = rng.uniform(0.0, spec.horizon, n)
    x = rng.uniform(lo, hi, (n, d))
    # second points: half far away, half in a shrinking neighbourhood of x
    scale = 10.0 ** rng.uniform(-6, 0, (n, 1))
    y_near = x + scale * rng.standard_normal((n, d))
    y_far = rng.uniform(lo, hi, (n, d))
    y = np.where((np.arange(n) % 2 == 0)[:, None], y_near, y_far)
    ks = rng.integers(0, spec.n_controls, n)

    worst: dict[tuple[str, str], tuple[float, Violation]] = {}

    def record(cond, fname, excess, value, bound, points):
        excess = np.asarray(excess, dtype=float)
        if not (excess > 1e-12).any():
            return
        i = int(np.argmax(excess))
        v = Violation(cond, fname, points(i), float(np.ravel(value)[i]), float(np.ravel(bound)[i]))
        key = (cond, fname)
        if key not in worst or excess[i] > worst[key][0]:
            worst[key] = (float(excess[i]), v)

    g = spec.g(x)
    _finite("terminal_cost", g, t, x, None, spec)
    c = spec.c(t, x)
    _finite("discount", c, t, x, None, spec)
    record("nonnegativity", "terminal_cost", -g, g, np.zeros(n), lambda i: _point(x=x[i]))
    record("nonnegativity", "discount", -c, c, np.zeros(n), lambda i: _point(t[i], x[i]))
    record("discount-bound", "discount", c - spec.discount_bound, c,
           np.full(n, spec.discount_bound), lambda i: _point(t[i], x[i]))

    for k in range(spec.n_controls):
        sel = ks == k
        if not sel.any():
            continue
        tk, xk, yk = t[sel], x[sel], y[sel]
        ak = spec.controls[k]
        f = spec.f(tk, xk, k)
        _finite("running_cost", f, tk, xk, k, spec)
        bx, by = spec.b(tk, xk, k), spec.b(tk, yk, k)
        sx, sy = spec.sigma(tk, xk, k), spec.sigma(tk, yk, k)
        _finite("drift", bx, tk, xk, k, spec)
        _finite("drift", by, tk, yk, k, spec)
        _finite("diffusion", sx, tk, xk, k, spec)
        _finite("diffusion", sy, tk, yk, k, spec)

        def pts(i, tk=tk, xk=xk, ak=ak):
            return _point(tk[i], xk[i], a=ak)

        record("nonnegativity", "running_cost", -f, f, np.zeros_like(f), pts)

        nx_ = np.linalg.norm(xk, axis=1)
        growth_bound = spec.lipschitz_K * (1.0 + nx_ ** spec.growth_p)
        fg = np.abs(f) + np.abs(g[sel])
        record("polynomial-growth", "running_cost+terminal_cost", fg - growth_bound, fg, growth_bound, pts)

        lin = np.linalg.norm(bx, axis=1) + np.linalg.norm(sx, axis=(1, 2))
        lin_bound = spec.lipschitz_K * (1.0 + nx_)
        record("linear-growth", "drift+diffusion", lin - lin_bound, lin, lin_bound, pts)

        dist = np.linalg.norm(xk - yk, axis=1)
        diff = np.linalg.norm(bx - by, axis=1) + np.linalg.norm(sx - sy, axis=(1, 2))
        ok = dist > 0
        quotient = np.where(ok, diff / np.where(ok, dist, 1.0), 0.0)
        record("lipschitz", "drift+diffusion", quotient - spec.lipschitz_K, quotient,
               np.full_like(quotient, spec.lipschitz_K),
               lambda i, tk=tk, xk=xk, yk=yk, ak=ak: _point(tk[i], xk[i], yk[i], ak))

    violations = [v for _, v in sorted(worst.values(), key=lambda item: (item[1].condition, item[1].function))]
    return ValidationReport(violations, sample_count, rng_seed)


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkCase:
    spec: ProblemSpec
    name: str
    reference_kind: str  # analytic | jensen-immediate-stop | zero-payoff | lattice-oracle
    reference_value: Callable[[float, np.ndarray], np.ndarray] | None = None
    probes: tuple[float, ...] = ()  # x-points where the acceptance suite reads values at t=0

    def __post_init__(self):
        kinds = {"analytic", "jensen-immediate-stop", "zero-payoff", "lattice-oracle"}
        if self.reference_kind not in kinds:
            raise SpecError(f"unknown reference_kind {self.reference_kind!r}")
        if self.reference_kind != "lattice-oracle" and self.reference_value is None:
            raise SpecError(f"{self.name}: reference_kind {self.reference_kind} needs a reference_value")


def _zero_payoff() -> BenchmarkCase:
    spec = ProblemSpec(
        name="zero-payoff",
        dim=1,
        horizon=1.0,
        controls=((-1.0,), (1.0,)),
        drift=["a - x"],
        diffusion="0.4 + 0.1*sin(x)",
        running_cost="0",
        terminal_cost="0",
        discount="0.05",
        discount_bound=1.0,
        lipschitz_K=2.0,
        growth_p=1.0,
    )
    return BenchmarkCase(spec, "zero-payoff", "zero-payoff",
                         lambda t, x: np.zeros(np.shape(x)[:-1]), probes=(0.0, 1.0))


def _jensen() -> BenchmarkCase:
    spec = ProblemSpec(
        name="jensen",
        dim=1,
        horizon=1.0,
        controls=((0.0,),),
        drift="0",
        diffusion="1",
        running_cost="0",
        terminal_cost="x^2",
        discount="0",
        discount_bound=1.0,
        lipschitz_K=2.0,
        growth_p=2.0,
    )
    return BenchmarkCase(spec, "jensen", "jensen-immediate-stop",
                         lambda t, x: np.asarray(x, dtype=float)[..., 0] ** 2, probes=(1.5, 0.0))


def _discounted_stop() -> BenchmarkCase:
    spec = ProblemSpec(
        name="discounted-stop",
        dim=1,
        horizon=1.0,
        controls=((-1.0,), (1.0,)),
        drift="a",
        diffusion="0.5",
        running_cost="0.1",
        terminal_cost="min(1, x^2)",
        discount="0.1",
        discount_bound=1.0,
        lipschitz_K=2.0,
        growth_p=2.0,
    )
    # g(0) = 0 puts x=0 inside the stop region; the probes sit where w < g
    return BenchmarkCase(spec, "discounted-stop", "lattice-oracle", probes=(1.0, 1.2))


def _degenerate_sigma() -> BenchmarkCase:
    spec = ProblemSpec(
        name="degenerate-sigma",
        dim=1,
        horizon=1.0,
        controls=((0.0,), (0.5,)),
        drift="0",
        diffusion="a",
        running_cost="0.05",
        terminal_cost="max(1 + cos(x), 0)",
        discount="0",
        discount_bound=1.0,
        lipschitz_K=3.0,
        growth_p=1.0,
    )
    return BenchmarkCase(spec, "degenerate-sigma", "lattice-oracle", probes=(0.0, 2.0))


def builtin_benchmarks() -> list[BenchmarkCase]:
    return [_zero_payoff(), _jensen(), _discounted_stop(), _degenerate_sigma()]


def get_benchmark(name: str) -> BenchmarkCase:
    for case in builtin_benchmarks():
        if case.name == name:
            return case
    names = ", ".join(c.name for c in builtin_benchmarks())
    raise KeyError(f"unknown benchmark {name!r} (available: {names})")


def as_spec(problem: ProblemSpec | BenchmarkCase | str) -> ProblemSpec:
    if isinstance(problem, ProblemSpec):
        return problem
    if isinstance(problem, BenchmarkCase):
        return problem.spec
    return get_benchmark(problem).spec

