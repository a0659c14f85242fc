"""Deterministic CSV/JSON writers.

Every file starts with (CSV) or contains (JSON) the tool version and a short
hash of the run configuration. Floats are written with 17 significant digits
so that values round-trip bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._version import __version__
from .hjb_solver import GridGeometry, ValueGrid
from .lattice_game import ValueTable
from .sde_sim import PathBundle

__all__ = [
    "config_hash",
    "format_number",
    "write_csv",
    "write_json",
    "write_grid_csv",
    "write_value_table_csv",
    "write_paths_csv",
    "read_csv",
]


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def config_hash(config: dict) -> str:
    text = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def format_number(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _header(chash: str) -> str:
    return f"# stopgame {__version__} config={chash}\n"


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], chash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(_header(chash))
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_number(v) for v in row) + "\n")
    return path


def write_json(path, payload: dict, chash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"tool": "stopgame", "version": __version__, "config_hash": chash, **_canonical(payload)}
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def read_csv(path) -> tuple[str, list[str], np.ndarray]:
    """Returns (header comment, column names, numeric rows)."""
    with open(path) as fh:
        comment = fh.readline().rstrip("\n")
        columns = fh.readline().rstrip("\n").split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return comment, columns, data


def _grid_columns(dim: int) -> list[str]:
    return ["t"] + [f"x_{k + 1}" for k in range(dim)] + ["w", "argmin_control", "stop_flag"]


def _slice_rows(t, nodes, w, arg, stop):
    for i in range(nodes.shape[0]):
        yield (float(t), *nodes[i].tolist(), float(w[i]), int(arg[i]), bool(stop[i]))


def write_grid_csv(path, grid: ValueGrid, chash: str) -> Path:
    d = grid.geometry.dim
    nodes = grid.geometry.nodes().reshape(-1, d)

    def rows():
        for n, t in enumerate(grid.times):
            yield from _slice_rows(t, nodes, grid.values[n].ravel(), grid.policy[n].ravel(),
                                   grid.stop_region[n].ravel())

    return write_csv(path, _grid_columns(d), rows(), chash)


def write_value_table_csv(path, table: ValueTable, geometry: GridGeometry, obstacle: np.ndarray,
                          chash: str) -> Path:
    """Lattice values in the grid CSV layout; ``stop_flag`` marks ``w == g``."""
    d = geometry.dim
    nodes = geometry.nodes().reshape(-1, d)

    def rows():
        for k, step in enumerate(table.steps):
            w = table.values[k]
            yield from _slice_rows(table.times[step], nodes, w, table.policy[k], w >= obstacle)

    return write_csv(path, _grid_columns(d), rows(), chash)


def write_paths_csv(path, bundle: PathBundle, chash: str) -> Path:
    d = bundle.x.shape[2]
    columns = ["path", "step", "t"] + [f"x_{k + 1}" for k in range(d)] + ["y", "z", "control_index"]

    def rows():
        for p in range(bundle.n_paths):
            for s in range(bundle.n_steps + 1):
                a = int(bundle.controls[p, s]) if s < bundle.n_steps else -1
                yield (p, s, float(bundle.time_grid[s]), *bundle.x[p, s].tolist(),
                       float(bundle.y[p, s]), float(bundle.z[p, s]), a)

    return write_csv(path, columns, rows(), chash)
