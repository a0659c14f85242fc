"""Monte Carlo look at the saddle point of the discounted-stop game.

The grid's argmin control and the value-threshold stopping rule are played
against a few random deviations. Neither player should gain more than the
scheme tolerance plus Monte Carlo noise.

    python3 demos/saddle_point.py [n_paths]
"""

from __future__ import annotations

import sys

from stopgame import GridGeometry, SchemeConfig, extract_saddle, get_benchmark, sandwich_test, solve
from stopgame.strategies import default_adversaries

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
spec = get_benchmark("discounted-stop").spec
geometry = GridGeometry.uniform((-3.0,), (3.0,), 0.025)
grid = solve(spec, SchemeConfig(), geometry)
start = [1.0]
print(f"w(0, 1.0) = {grid.value_at(0.0, [start])[0]:.5f}")

controls, stops = default_adversaries(spec, geometry, start, 3, seed=1)
report = sandwich_test(spec, grid, controls, stops, n_paths, 1, start=start)
for e in report.entries:
    print(f"{e.side:>5}  {e.adversary['kind']:<15} mc={e.mc_value:.4f}  margin={e.margin:+.4f}  "
          f"tol={e.tolerance:.4f}  {'ok' if e.passed else 'VIOLATED'}")

cert = extract_saddle(spec, grid, 0.05, start=start, k=3, n_paths=n_paths, seed=2)
print(f"\nsaddle value {cert.central_value:.4f} +- {cert.central_stderr:.4f}, certificate passed: {cert.passed}")
