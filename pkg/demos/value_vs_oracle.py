"""Grid value of the discounted-stop game against the exact lattice game.

Solves the obstacle HJB equation on successively halved meshes and compares
the value at two probe points with a much finer lattice reference.

    python3 demos/value_vs_oracle.py
"""

from __future__ import annotations

import numpy as np

from stopgame import GridGeometry, SchemeConfig, convergence_study, get_benchmark, solve

case = get_benchmark("discounted-stop")
spec = case.spec

rows = convergence_study(spec, case.probes, [0.1, 0.05, 0.025, 0.0125])
print(f"{'dx':>8} {'dt':>10} {'x':>5} {'w(0,x)':>10} {'oracle':>10} {'error':>10} {'ratio':>6}")
for r in rows:
    print(f"{r.dx:8.4f} {r.dt:10.2e} {r.probe[0]:5.2f} {r.value:10.6f} {r.reference:10.6f} "
          f"{r.error:10.2e} {r.ratio:6.2f}")

# where does the stopper quit at t = 0?
grid = solve(spec, SchemeConfig(), GridGeometry.uniform((-3.0,), (3.0,), 0.025))
x = grid.geometry.axes()[0]
stop = grid.stop_region[0]
edges = x[1:][np.diff(stop.astype(int)) != 0]
print("\nstop region at t=0 changes at x =", np.round(edges, 3).tolist())
print("argmin control at x=1:", spec.controls[int(grid.control_at(0.0, [[1.0]])[0])])
