from __future__ import annotations

import numpy as np
import pytest

from stopgame import GridGeometry, ProblemSpec, SchemeConfig, builtin_benchmarks, solve

# criterion lines collected by test_acceptance and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_spec(**overrides) -> ProblemSpec:
    """Small 1-D instance with every coefficient trivial unless overridden."""
    base = dict(
        dim=1, horizon=1.0, controls=((0.0,),), drift="0", diffusion="0",
        running_cost="0", terminal_cost="0", discount="0",
        discount_bound=1.0, lipschitz_K=10.0, growth_p=2.0,
    )
    base.update(overrides)
    return ProblemSpec(**base)


@pytest.fixture(scope="session")
def benchmarks():
    return {case.name: case for case in builtin_benchmarks()}


@pytest.fixture(scope="session")
def box_geometry():
    return GridGeometry.uniform((-3.0,), (3.0,), 0.025)


@pytest.fixture(scope="session")
def solved(benchmarks, box_geometry):
    """Every builtin benchmark solved on [-3, 3] with dx = 0.025."""
    return {name: solve(case.spec, SchemeConfig(), box_geometry) for name, case in benchmarks.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
