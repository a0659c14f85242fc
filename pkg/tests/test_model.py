import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopgame import ProblemSpec, SpecError, builtin_benchmarks, get_benchmark, validate_spec
from stopgame.model import as_spec

from conftest import make_spec


def test_quadratic_heat_instance_is_accepted():
    spec = ProblemSpec(dim=2, horizon=1.0, controls=((0.0,),), drift=["0", "0"],
                       diffusion=[["1", "0"], ["0", "1"]], running_cost="0",
                       terminal_cost="x1^2 + x2^2", discount="0",
                       discount_bound=1.0, lipschitz_K=10.0, growth_p=2.0)
    for seed in (0, 1, 7):
        assert validate_spec(spec, 500, seed).violations == []


def test_discount_above_bound_is_reported():
    report = validate_spec(make_spec(discount="2"), 200, 0)
    assert "discount-bound" in report.conditions()
    v = next(v for v in report.violations if v.condition == "discount-bound")
    assert v.value == 2.0 and v.bound == 1.0


def test_exponential_terminal_cost_breaks_polynomial_growth():
    # exp(5) ~ 148.4 > 1 * (1 + 25)
    assert np.exp(5.0) > 1.0 * (1.0 + 5.0 ** 2)
    spec = make_spec(terminal_cost="exp(x)", lipschitz_K=1.0, growth_p=2.0)
    report = validate_spec(spec, 1000, 3)
    v = next(v for v in report.violations if v.condition == "polynomial-growth")
    assert v.point["x"][0] > 4.5


def test_negative_costs_and_lipschitz_failures():
    report = validate_spec(make_spec(running_cost="-1", drift="x^2", lipschitz_K=1.0), 500, 0)
    assert {"nonnegativity", "lipschitz", "linear-growth"} <= report.conditions()
    assert all(v.point for v in report.violations)


def test_one_witness_per_condition_and_function():
    report = validate_spec(make_spec(terminal_cost="-1 - x^2"), 1000, 0)
    keys = [(v.condition, v.function) for v in report.violations]
    assert len(keys) == len(set(keys))


def test_validation_is_deterministic():
    spec = make_spec(terminal_cost="exp(x)", lipschitz_K=1.0)
    a = validate_spec(spec, 300, 11).to_dict()
    b = validate_spec(spec, 300, 11).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_non_finite_coefficient_names_function_and_point():
    with pytest.raises(SpecError, match="drift.*x"):
        validate_spec(make_spec(drift="1/(x - x)"), 10, 0)


def test_sample_count_must_be_positive():
    with pytest.raises(ValueError):
        validate_spec(make_spec(), 0, 0)


@pytest.mark.parametrize("changes, message", [
    (dict(controls=()), "nonempty"),
    (dict(controls=((1.0,), (1.0,))), "duplicate"),
    (dict(terminal_cost="t + x"), "terminal_cost"),
    (dict(discount="a"), "discount"),
    (dict(dim=0), "dim"),
    (dict(horizon=-1.0), "horizon"),
    (dict(growth_p=0.5), "growth_p"),
    (dict(drift="x2"), "beyond dim"),
])
def test_constructor_rejects_malformed_instances(changes, message):
    with pytest.raises(SpecError, match=message):
        make_spec(**changes)


def test_every_benchmark_validates_cleanly():
    for case in builtin_benchmarks():
        assert validate_spec(case.spec, 1000, 0).accepted, case.name


def test_benchmark_reference_values():
    names = {c.name for c in builtin_benchmarks()}
    assert {"zero-payoff", "jensen", "discounted-stop", "degenerate-sigma"} <= names
    zero = get_benchmark("zero-payoff")
    xs = np.linspace(-4, 4, 9)[:, None]
    assert np.all(zero.reference_value(0.7, xs) == 0.0)
    assert np.all(zero.spec.g(xs) == 0.0)
    jensen = get_benchmark("jensen")
    assert jensen.reference_value(0.3, np.array([[1.5]]))[0] == 2.25
    stop = get_benchmark("discounted-stop")
    assert stop.reference_kind == "lattice-oracle" and stop.reference_value is None


def test_benchmark_definitions():
    stop = get_benchmark("discounted-stop").spec
    x = np.array([[-2.0], [0.5], [3.0]])
    assert np.allclose(stop.g(x), [1.0, 0.25, 1.0])
    assert [stop.b(0.0, x, k)[0, 0] for k in range(2)] == [-1.0, 1.0]
    deg = get_benchmark("degenerate-sigma").spec
    assert [deg.sigma(0.0, x, k)[0, 0, 0] for k in range(2)] == [0.0, 0.5]
    assert np.all(deg.g(np.linspace(-10, 10, 101)[:, None]) >= 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-6, 10))
def test_jensen_obstacle_is_midpoint_convex(x, h):
    g = get_benchmark("jensen").spec.g
    pts = np.array([[x - h], [x], [x + h]])
    lo, mid, hi = g(pts)
    assert 0.5 * (lo + hi) >= mid


def test_unknown_benchmark():
    with pytest.raises(KeyError, match="available"):
        get_benchmark("nope")


def test_dict_round_trip_and_replace():
    for case in builtin_benchmarks():
        data = json.loads(json.dumps(case.spec.to_dict()))
        assert ProblemSpec.from_dict(data).to_dict() == case.spec.to_dict()
    spec = as_spec("jensen").replace(terminal_cost="x^2 + 0.1")
    assert spec.g(np.array([[1.0]]))[0] == pytest.approx(1.1)


def test_from_dict_reports_missing_and_unknown_fields():
    data = as_spec("jensen").to_dict()
    del data["drift"]
    with pytest.raises(SpecError, match="drift"):
        ProblemSpec.from_dict(data)
    data = as_spec("jensen").to_dict()
    data["colour"] = 1
    with pytest.raises(SpecError, match="colour"):
        ProblemSpec.from_dict(data)


def test_spec_is_immutable():
    spec = as_spec("jensen")
    with pytest.raises(AttributeError):
        spec.horizon = 2.0


def test_vector_and_matrix_coefficients_shapes():
    spec = ProblemSpec(dim=2, horizon=1.0, controls=((1.0, 2.0), (0.0, 0.0)),
                       drift=["a1", "a2 - x1"], diffusion=[["0.1", "0"], ["0", "a2"]],
                       running_cost="a1", terminal_cost="x1^2", discount="0.1",
                       discount_bound=1.0, lipschitz_K=10.0, growth_p=2.0)
    x = np.zeros((5, 2))
    assert spec.b(0.0, x, 0).shape == (5, 2)
    assert spec.sigma(0.0, x, 0).shape == (5, 2, 2)
    assert np.allclose(spec.b(0.0, x, 0), [1.0, 2.0])
    assert spec.control_dim == 2 and spec.n_controls == 2
