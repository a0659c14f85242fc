"""Batch front door: ``stopgame --config run.json [--pipeline ...]``.

A run config is a single JSON document::

    {
      "problem": "discounted-stop",          # builtin name or a ProblemSpec mapping
      "pipeline": "solve",                   # solve | oracle | sandwich | saddle | convergence | validate
      "mesh": {"x_min": [-3], "x_max": [3], "dx": 0.025},
      "scheme": {"cfl_safety": 0.9, "stop_tol": 0.015},
      "mc": {"n_paths": 100000, "n_steps": 200, "seed": 0},
      "output_dir": "out"
    }

plus optional pipeline sections (``convergence``, ``sandwich``, ``saddle``,
``oracle``, ``validate``). Exit status: 0 when every checked invariant
holds, 1 when one fails, 2 when the config cannot be parsed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import artifacts
from ._version import __version__
from .errors import StopGameError
from .hjb_solver import GridGeometry, SchemeConfig, convergence_study, solve
from .lattice_game import (
    CONTROLLER_FIRST,
    STOPPER_FIRST,
    LatticeMesh,
    backward_induction,
    build_chain,
)
from .model import BenchmarkCase, ProblemSpec, get_benchmark, validate_spec
from .strategies import default_adversaries, extract_saddle, sandwich_test

__all__ = ["PIPELINES", "ConfigError", "RunConfig", "RunResult", "load_config", "run", "main"]

log = logging.getLogger("stopgame")

PIPELINES = ("solve", "oracle", "sandwich", "saddle", "convergence", "validate")
_TOP_LEVEL = {"problem", "pipeline", "mesh", "scheme", "mc", "output_dir",
              "convergence", "sandwich", "saddle", "oracle", "validate"}


class ConfigError(StopGameError, ValueError):
    """Config problem; ``where`` is a field path or ``line:col``."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class MonteCarloConfig:
    n_paths: int = 100_000
    n_steps: int = 200
    seed: int = 0


@dataclass
class RunConfig:
    problem: ProblemSpec
    pipeline: str
    mesh: GridGeometry
    scheme: SchemeConfig
    mc: MonteCarloConfig | None
    output_dir: Path
    benchmark: BenchmarkCase | None = None
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.options.get(name, {}))

    def hash(self) -> str:
        # output_dir does not change the artifacts, so it is left out of the hash
        return artifacts.config_hash({k: v for k, v in self.raw.items() if k != "output_dir"})


@dataclass
class RunResult:
    status: int
    files: list[Path]
    failures: list[str]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _number(value, where: str, *, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(where, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(where, "expected an object")
    return value


def _parse_problem(value) -> tuple[ProblemSpec, BenchmarkCase | None]:
    if isinstance(value, str):
        try:
            case = get_benchmark(value)
        except KeyError as exc:
            raise ConfigError("problem", str(exc.args[0])) from None
        return case.spec, case
    try:
        return ProblemSpec.from_dict(_mapping(value, "problem")), None
    except (ValueError, TypeError) as exc:
        raise ConfigError("problem", str(exc)) from None


def _parse_mesh(value, dim: int) -> GridGeometry:
    if value is None:
        return GridGeometry.uniform([-3.0] * dim, [3.0] * dim, 0.025)
    m = _mapping(value, "mesh")
    unknown = set(m) - {"x_min", "x_max", "dx", "nx"}
    if unknown:
        raise ConfigError("mesh", f"unknown field(s): {', '.join(sorted(unknown))}")
    lo = [_number(v, "mesh.x_min") for v in np.atleast_1d(m.get("x_min", [-3.0] * dim)).tolist()]
    hi = [_number(v, "mesh.x_max") for v in np.atleast_1d(m.get("x_max", [3.0] * dim)).tolist()]
    if len(lo) != dim or len(hi) != dim:
        raise ConfigError("mesh", f"x_min and x_max need {dim} component(s)")
    try:
        if "nx" in m:
            nx = [_number(v, "mesh.nx", integer=True) for v in np.atleast_1d(m["nx"]).tolist()]
            return GridGeometry(tuple(lo), tuple(hi), tuple(nx))
        return GridGeometry.uniform(lo, hi, _number(m.get("dx", 0.025), "mesh.dx", positive=True))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("mesh", str(exc)) from None


def _parse_scheme(value) -> SchemeConfig:
    if value is None:
        return SchemeConfig()
    s = _mapping(value, "scheme")
    known = {"cfl_safety", "boundary", "stop_tol", "domain_margin"}
    unknown = set(s) - known
    if unknown:
        raise ConfigError("scheme", f"unknown field(s): {', '.join(sorted(unknown))}")
    kwargs = {k: (v if k == "boundary" else _number(v, f"scheme.{k}")) for k, v in s.items()}
    try:
        return SchemeConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError("scheme", str(exc)) from None


def _parse_mc(value) -> MonteCarloConfig | None:
    if value is None:
        return None
    m = _mapping(value, "mc")
    unknown = set(m) - {"n_paths", "n_steps", "seed"}
    if unknown:
        raise ConfigError("mc", f"unknown field(s): {', '.join(sorted(unknown))}")
    return MonteCarloConfig(
        n_paths=_number(m.get("n_paths", 100_000), "mc.n_paths", positive=True, integer=True),
        n_steps=_number(m.get("n_steps", 200), "mc.n_steps", positive=True, integer=True),
        seed=_number(m.get("seed", 0), "mc.seed", integer=True),
    )


def parse_config(data: dict, *, pipeline: str | None = None, seed: int | None = None,
                 output_dir: str | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a decoded JSON document plus command-line overrides."""
    data = dict(_mapping(data, "config"))
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ConfigError("config", f"unknown field(s): {', '.join(sorted(unknown))}")
    if pipeline is not None:
        data["pipeline"] = pipeline
    if seed is not None:
        data["mc"] = {**(data.get("mc") or {}), "seed": int(seed)}
    if "problem" not in data:
        raise ConfigError("problem", "missing")
    name = data.get("pipeline")
    if name not in PIPELINES:
        raise ConfigError("pipeline", f"must be one of {', '.join(PIPELINES)}, got {name!r}")
    spec, case = _parse_problem(data["problem"])
    mc = _parse_mc(data.get("mc"))
    if name in ("sandwich", "saddle") and mc is None:
        raise ConfigError("mc", f"required for the {name} pipeline")
    out = output_dir if output_dir is not None else data.get("output_dir", "stopgame-out")
    if not isinstance(out, str):
        raise ConfigError("output_dir", "expected a path string")
    options = {k: _mapping(data[k], k) for k in ("convergence", "sandwich", "saddle", "oracle", "validate")
               if k in data}
    return RunConfig(spec, name, _parse_mesh(data.get("mesh"), spec.dim), _parse_scheme(data.get("scheme")),
                     mc, Path(out), case, options, data)


def load_config(path, **overrides) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return parse_config(data, **overrides)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def _probe_points(cfg: RunConfig, section: dict) -> list[tuple[float, ...]]:
    if "probes" in section:
        probes = section["probes"]
    elif cfg.benchmark is not None and cfg.benchmark.probes:
        probes = list(cfg.benchmark.probes)
    else:
        probes = [[0.0] * cfg.problem.dim]
    return [tuple(float(v) for v in np.atleast_1d(p)) for p in probes]


def _start(cfg: RunConfig, section: dict) -> list[float]:
    if "start" in section:
        return [float(v) for v in np.atleast_1d(section["start"])]
    return list(_probe_points(cfg, {})[0])


def _pipeline_solve(cfg, chash, out, failures):
    grid = solve(cfg.problem, cfg.scheme, cfg.mesh)
    g = grid.obstacle
    if not (np.all(grid.values >= 0.0) and np.all(grid.values <= g)):
        failures.append("obstacle bounds 0 <= w <= g")
    if not np.array_equal(grid.values[-1], g):
        failures.append("terminal slice w(T) = g")
    meta = {"pipeline": "solve", "problem": cfg.problem.to_dict(), **grid.metadata(),
            "cfl_numbers": grid.cfl_numbers, "min_w": float(grid.values.min()),
            "max_w_minus_g": float((grid.values - g).max())}
    return [artifacts.write_grid_csv(out / "grid.csv", grid, chash),
            artifacts.write_json(out / "grid_meta.json", meta, chash)]


def _pipeline_oracle(cfg, chash, out, failures):
    opts = cfg.section("oracle")
    mesh = LatticeMesh.matched(cfg.problem, cfg.mesh, float(opts.get("safety", 1.0)))
    game = build_chain(cfg.problem, mesh)
    upper = backward_induction(game, STOPPER_FIRST, keep=[0])
    lower = backward_induction(game, CONTROLLER_FIRST, keep=[0])
    gap = float(np.abs(upper.values - lower.values).max())
    if not gap <= 1e-12:
        failures.append("ordering equality (stopper-first = controller-first)")
    cert = {"pipeline": "oracle", "mesh": cfg.mesh.to_dict(), "n_steps": mesh.n_steps, "dt": mesh.dt,
            "orderings": [STOPPER_FIRST, CONTROLLER_FIRST], "max_gap": gap, "tolerance": 1e-12,
            "passed": gap <= 1e-12}
    return [artifacts.write_value_table_csv(out / "oracle_values.csv", upper, cfg.mesh,
                                            game.obstacle, chash),
            artifacts.write_json(out / "oracle_certificate.json", cert, chash)]


def _pipeline_sandwich(cfg, chash, out, failures, threads):
    opts = cfg.section("sandwich")
    start = _start(cfg, opts)
    grid = solve(cfg.problem, cfg.scheme, cfg.mesh)
    count = int(opts.get("n_adversaries", 3))
    controls, stops = default_adversaries(cfg.problem, cfg.mesh, start, count, cfg.mc.seed)
    report = sandwich_test(cfg.problem, grid, controls, stops, cfg.mc.n_paths, cfg.mc.seed, start=start,
                           n_steps=cfg.mc.n_steps,
                           scheme_tolerance=float(opts.get("scheme_tolerance", 5e-2)), threads=threads)
    if not report.passed:
        failures.append("sandwich margins >= -(3 stderr + scheme tolerance)")
    return [artifacts.write_json(out / "sandwich.json", {"pipeline": "sandwich", **report.to_dict()}, chash)]


def _pipeline_saddle(cfg, chash, out, failures, threads):
    opts = cfg.section("saddle")
    grid = solve(cfg.problem, cfg.scheme, cfg.mesh)
    cert = extract_saddle(cfg.problem, grid, float(opts.get("epsilon", 0.05)), start=_start(cfg, opts),
                          k=int(opts.get("k", 5)), n_paths=cfg.mc.n_paths, n_steps=cfg.mc.n_steps,
                          seed=cfg.mc.seed, threads=threads)
    if not cert.passed:
        failures.append("epsilon-saddle certificate")
    return [artifacts.write_json(out / "saddle.json", {"pipeline": "saddle", **cert.to_dict()}, chash)]


def _pipeline_convergence(cfg, chash, out, failures):
    opts = cfg.section("convergence")
    dx_list = [float(v) for v in opts.get("dx_list", [0.1, 0.05, 0.025])]
    lo, hi = cfg.mesh.x_min[0], cfg.mesh.x_max[0]
    probes = _probe_points(cfg, opts)
    rows = convergence_study(cfg.problem, probes, dx_list, box=(lo, hi), scheme=cfg.scheme,
                             reference_dx=opts.get("reference_dx"))
    max_error = float(opts.get("max_error", 5e-2))
    window = [float(v) for v in opts.get("ratio_window", [1.5, 2.6])]
    finest = min(dx_list)
    if any(r.error > max_error for r in rows if r.dx == finest):
        failures.append(f"error at dx={finest} <= {max_error}")
    if any(not window[0] <= r.ratio <= window[1] for r in rows if math.isfinite(r.ratio)):
        failures.append(f"error ratios in [{window[0]}, {window[1]}]")
    d = cfg.problem.dim
    columns = ["dx", "dt"] + [f"x_{k + 1}" for k in range(d)] + ["value", "reference", "error", "ratio"]
    table = [(r.dx, r.dt, *r.probe, r.value, r.reference, r.error, r.ratio) for r in rows]
    return [artifacts.write_csv(out / "convergence.csv", columns, table, chash)]


def _pipeline_validate(cfg, chash, out, failures):
    opts = cfg.section("validate")
    report = validate_spec(cfg.problem, int(opts.get("sample_count", 1000)), int(opts.get("rng_seed", 0)))
    if not report.accepted:
        failures.append("structural assumptions: " + ", ".join(sorted(report.conditions())))
    payload = {"pipeline": "validate", "problem": cfg.problem.to_dict(), **report.to_dict()}
    return [artifacts.write_json(out / "validation.json", payload, chash)]


def run(cfg: RunConfig, *, threads: int = 1) -> RunResult:
    """Run one pipeline and write its artifacts into ``cfg.output_dir``."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.hash()
    failures: list[str] = []
    started = time.perf_counter()
    name = cfg.pipeline
    if name in ("sandwich", "saddle"):
        fn = _pipeline_sandwich if name == "sandwich" else _pipeline_saddle
        files = fn(cfg, chash, out, failures, threads)
    else:
        files = globals()[f"_pipeline_{name}"](cfg, chash, out, failures)
    # runtime is logged rather than written so that artifacts stay byte-identical
    log.info("%s finished in %.2fs", name, time.perf_counter() - started)
    return RunResult(1 if failures else 0, files, failures)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("STOPGAME_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("STOPGAME_THREADS", f"expected an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stopgame", description="Controller-and-stopper game solver.")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--pipeline", choices=PIPELINES, help="override the config's pipeline")
    p.add_argument("--output", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="Monte Carlo seed (overrides mc.seed)")
    p.add_argument("--threads", type=int, help="worker threads (default: $STOPGAME_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"stopgame {__version__}")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        cfg = load_config(args.config, pipeline=args.pipeline, seed=args.seed, output_dir=args.output)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run(cfg, threads=threads)
    except StopGameError as exc:
        print(f"{cfg.pipeline} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in result.files:
        print(path)
    for failure in result.failures:
        print(f"invariant failed: {failure}", file=sys.stderr)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
