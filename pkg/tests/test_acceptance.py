"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test appends a ``[PASS]``/``[FAIL]`` line that is echoed in the pytest
terminal summary (and printed directly when run as a script).
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from stopgame import (
    GridGeometry,
    LatticeMesh,
    ProblemSpec,
    SchemeConfig,
    backward_induction,
    build_chain,
    builtin_benchmarks,
    constant_policy,
    convergence_study,
    enumerate_strategies_value,
    evaluate_pair,
    extract_saddle,
    feedback_policy,
    game_tree_value,
    moment_scaling_diagnostic,
    non_anticipativity_replay,
    random_game,
    sandwich_test,
    snell_stop_rule,
    solve,
)
from stopgame.cli import PIPELINES, parse_config, run
from stopgame.lattice_game import CONTROLLER_FIRST, STOPPER_FIRST
from stopgame.strategies import boundary_hit, constant_time, control_count, default_adversaries

from conftest import ACCEPTANCE_LINES

BOX = GridGeometry.uniform((-3.0,), (3.0,), 0.025)
SEED = 20240601


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def cases():
    return {case.name: case for case in builtin_benchmarks()}


@pytest.fixture(scope="module")
def grids(cases):
    return {name: solve(case.spec, SchemeConfig(), BOX) for name, case in cases.items()}


def test_criterion_01_discrete_game_value(cases):
    started = time.perf_counter()
    worst_orders = 0.0
    for case in cases.values():
        game = build_chain(case.spec, LatticeMesh.matched(case.spec, BOX))
        up = backward_induction(game, STOPPER_FIRST).values
        lo = backward_induction(game, CONTROLLER_FIRST).values
        worst_orders = max(worst_orders, float(np.abs(up - lo).max()))

    rng = np.random.default_rng(SEED)
    for _ in range(50):
        game = random_game(rng, int(rng.integers(2, 31)), int(rng.integers(1, 4)), int(rng.integers(1, 51)),
                           absorbing=bool(rng.integers(0, 2)))
        up = backward_induction(game, STOPPER_FIRST).values
        lo = backward_induction(game, CONTROLLER_FIRST).values
        worst_orders = max(worst_orders, float(np.abs(up - lo).max()))

    worst_tree = worst_enum = 0.0
    n_enum = 0
    for i in range(40):
        n_nodes, m, N = (5, 3, 4) if i < 5 else (int(rng.integers(2, 6)), int(rng.integers(1, 4)),
                                                 int(rng.integers(1, 5)))
        game = random_game(rng, n_nodes, m, N, absorbing=bool(i % 3 == 0))
        table = backward_induction(game).at(0)
        for node in range(n_nodes):
            for order in (STOPPER_FIRST, CONTROLLER_FIRST):
                worst_tree = max(worst_tree, abs(game_tree_value(game, node, order) - table[node]))
            # literal plan x stop-table enumeration is doubly exponential; keep it to tiny games
            if N <= 2 and not game.absorbing.any() and n_nodes * m <= 8:
                u, v = enumerate_strategies_value(game, node)
                worst_enum = max(worst_enum, abs(u - table[node]), abs(v - table[node]))
                n_enum += 1
    elapsed = time.perf_counter() - started
    ok = worst_orders <= 1e-12 and worst_tree <= 1e-12 and worst_enum <= 1e-12 and n_enum > 0 and elapsed < 30
    record(1, "discrete game value", ok,
           f"order gap {worst_orders:.1e}, history-tree gap {worst_tree:.1e}, "
           f"strategy-enumeration gap {worst_enum:.1e} ({n_enum} starts), {elapsed:.1f}s")


@pytest.mark.parametrize("name", ["discounted-stop", "degenerate-sigma"])
def test_criterion_02_pde_equals_game_value(cases, name):
    case = cases[name]
    started = time.perf_counter()
    dx_list = [0.1, 0.05, 0.025, 0.0125]
    rows = convergence_study(case.spec, list(case.probes), dx_list, box=(-3.0, 3.0))
    elapsed = time.perf_counter() - started

    at_target = [r for r in rows if r.dx == 0.025]
    max_err = max(r.error for r in at_target)
    ratio_ok, notes = True, []
    for p in {r.probe for r in rows}:
        errors = [r.error for r in rows if r.probe == p]
        ratios = [r.ratio for r in rows if r.probe == p][1:]
        if all(e == 0.0 for e in errors):
            # the scheme reproduces the oracle exactly: there is no error left to shrink
            notes.append(f"x={p[0]}: error 0 on every mesh, ratio undefined")
            continue
        inside = all(1.5 <= q <= 2.6 for q in ratios)
        ratio_ok &= inside
        notes.append(f"x={p[0]}: ratios " + ", ".join(f"{q:.2f}" for q in ratios))

    # truncation check: doubling the box moves probe values by less than half the tolerance
    wide = solve(case.spec, SchemeConfig(), GridGeometry.uniform((-6.0,), (6.0,), 0.025))
    narrow = solve(case.spec, SchemeConfig(), BOX)
    pts = np.asarray(case.probes, dtype=float)[:, None]
    shift = float(np.abs(wide.value_at(0.0, pts) - narrow.value_at(0.0, pts)).max())

    ok = max_err <= 5e-2 and ratio_ok and shift < 2.5e-2 and elapsed < 120
    record(2, f"PDE = game value [{name}]", ok,
           f"max |w - oracle| at dx=0.025 = {max_err:.2e}; " + "; ".join(sorted(notes))
           + f"; box-doubling shift {shift:.1e}; {elapsed:.1f}s")


def test_criterion_03_obstacle_and_sign_bounds(grids):
    bad = []
    for name, grid in grids.items():
        g = grid.obstacle
        if not (np.all(grid.values >= 0.0) and np.all(grid.values <= g)):
            bad.append(f"{name}: bounds")
        if not np.array_equal(grid.values[-1], g):
            bad.append(f"{name}: terminal slice")
    record(3, "obstacle and sign bounds", not bad,
           "0 <= w <= g and w(T) = g exactly on " + ", ".join(grids) if not bad else "; ".join(bad))


def test_criterion_04_discrete_comparison(cases):
    geom = GridGeometry.uniform((-3.0,), (3.0,), 0.05)
    worst = 0.0
    for case in cases.values():
        src = case.spec.terminal_cost.source
        base = solve(case.spec, SchemeConfig(), geom).values
        for raised in (f"({src}) + 0.1", f"({src}) * 1.1"):
            other = solve(case.spec.replace(terminal_cost=raised), SchemeConfig(), geom).values
            worst = max(worst, float((base - other).max()))
    record(4, "discrete comparison", worst <= 1e-12, f"max(w1 - w2) = {worst:.1e} over 4 benchmarks x 2 raises")


def test_criterion_05_jensen_immediate_stop(grids):
    grid = grids["jensen"]
    gap = float(np.abs(grid.values - grid.obstacle).max())
    snell = snell_stop_rule(grid)
    late = 0
    for x in (-2.5, -1.0, 0.0, 0.7, 1.5, 2.9):
        res = evaluate_pair(grid.spec, [x], constant_policy(0), snell, 10_000, 200, SEED)
        late += int(np.count_nonzero(res.stop_steps))
    record(5, "jensen immediate stop", gap <= 1e-10 and late == 0,
           f"max |w - g| = {gap:.1e}; paths not stopped at step 0: {late} of 60000")


def test_criterion_06_zero_payoff(grids):
    grid = grids["zero-payoff"]
    peak = float(np.abs(grid.values).max())
    spec = grid.spec
    controls, stops = default_adversaries(spec, BOX, [0.0], 3, SEED)
    values = []
    for control in [feedback_policy(grid), constant_policy(0)] + controls:
        for strategy in [snell_stop_rule(grid), constant_time(1.0)] + stops:
            for x in (0.0, 1.0):
                values.append(evaluate_pair(spec, [x], control, strategy, 2000, 100, SEED).value)
    record(6, "zero payoff", peak <= 1e-12 and all(v == 0.0 for v in values),
           f"max |w| = {peak:.1e}; {len(values)} Monte Carlo evaluations, max |value| = {max(map(abs, values)):.1e}")


def test_criterion_07_sandwich(grids):
    grid = grids["discounted-stop"]
    started = time.perf_counter()
    controls, stops = default_adversaries(grid.spec, BOX, [1.0], 3, SEED)
    report = sandwich_test(grid.spec, grid, controls, stops, 100_000, SEED, start=[1.0], n_steps=200,
                           threads=4)
    elapsed = time.perf_counter() - started
    worst = min(e.margin + e.tolerance for e in report.entries)
    record(7, "sandwich U >= V", report.passed and len(report.entries) == 6 and elapsed < 120,
           f"w(0,1) = {report.value:.4f}; margins "
           + ", ".join(f"{e.side}:{e.margin:+.4f}" for e in report.entries)
           + f"; min slack {worst:.4f}; {elapsed:.1f}s")


def test_criterion_08_epsilon_saddle(grids):
    grid = grids["discounted-stop"]
    cert = extract_saddle(grid.spec, grid, 0.05, start=[1.0], k=5, n_paths=100_000, n_steps=200,
                          seed=SEED, threads=4)
    worst = min(e.margin + e.tolerance for e in cert.entries)
    record(8, "epsilon saddle", cert.passed and len(cert.entries) == 10,
           f"central value {cert.central_value:.4f} +- {cert.central_stderr:.1e}; "
           f"min slack {worst:.4f}; refined={cert.refined}")


def test_criterion_09_moment_scaling():
    spec = ProblemSpec(dim=1, horizon=1.0, controls=((0.0,),), drift="0", diffusion="1",
                       running_cost="0", terminal_cost="0", discount="0", discount_bound=1.0,
                       lipschitz_K=2.0, growth_p=1.0)
    est = moment_scaling_diagnostic(spec, [0.0], 2.0, [0.01, 0.02, 0.04, 0.08], 200_000, SEED)
    h, m = np.log([e[0] for e in est]), np.log([e[1] for e in est])
    slope = float(np.polyfit(h, m, 1)[0])
    record(9, "moment scaling", 0.85 <= slope <= 1.15, f"log-log slope {slope:.4f}")


def test_criterion_10_non_anticipativity(cases, grids):
    total, divergences = 0, 0
    for name, case in cases.items():
        spec = case.spec
        start = [float(case.probes[0])]
        strategies = [snell_stop_rule(grids[name]), constant_time(0.0), constant_time(0.5),
                      boundary_hit(-0.5, 1.5), control_count(0, 3)]
        strategies += default_adversaries(spec, BOX, start, 3, SEED)[1]
        for strat in strategies:
            divergences += non_anticipativity_replay(spec, strat, start, n_pairs=100, seed=SEED)
            total += 1
    record(10, "non-anticipativity", divergences == 0,
           f"{total} strategies x 100 replay pairs, {divergences} divergent decisions")


def test_criterion_11_determinism(tmp_path):
    doc = {"problem": "discounted-stop", "mesh": {"x_min": [-3], "x_max": [3], "dx": 0.05},
           "mc": {"n_paths": 5000, "n_steps": 100, "seed": 7},
           "convergence": {"dx_list": [0.1, 0.05]}}
    differing = []
    n_files = 0
    for pipeline in PIPELINES:
        blobs = []
        for i in range(2):
            result = run(parse_config(doc, pipeline=pipeline, output_dir=str(tmp_path / pipeline / str(i))),
                         threads=1 + 2 * i)
            blobs.append({p.name: p.read_bytes() for p in result.files})
        n_files += len(blobs[0])
        if blobs[0] != blobs[1]:
            differing.append(pipeline)
    record(11, "determinism", not differing,
           f"{n_files} artifacts over {len(PIPELINES)} pipelines byte-identical" if not differing
           else "differs: " + ", ".join(differing))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
