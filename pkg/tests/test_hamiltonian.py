import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stopgame import HamiltonianInput, ProblemSpec, SpecError, hamiltonian_a, hamiltonian_min

from conftest import make_spec

finite = st.floats(-3, 3, allow_nan=False)


def spec2d(**kw):
    base = dict(dim=2, horizon=1.0, controls=((0.0,),), drift=["0", "0"],
                diffusion=[["1", "0"], ["0", "1"]], running_cost="0", terminal_cost="0",
                discount="0", discount_bound=1.0, lipschitz_K=10.0, growth_p=2.0)
    base.update(kw)
    return ProblemSpec(**base)


def test_identity_diffusion_trace():
    inp = HamiltonianInput(0.0, np.zeros(2), np.zeros(2), np.eye(2))
    assert hamiltonian_a(spec2d(), inp, 0) == -1.0


def test_drift_gradient_and_cost():
    spec = make_spec(drift="1", running_cost="1")
    assert hamiltonian_a(spec, HamiltonianInput(0.0, [0.0], [2.0], [[0.0]]), 0) == -3.0


def test_scalar_second_order_term():
    spec = make_spec(diffusion="2")
    assert hamiltonian_a(spec, HamiltonianInput(0.0, [0.0], [0.0], [[0.5]]), 0) == -1.0


def test_min_over_singleton_and_pair():
    spec = make_spec(drift="1", running_cost="0.5")
    inp = HamiltonianInput(0.3, [0.1], [1.0], [[2.0]])
    assert hamiltonian_min(spec, inp) == (hamiltonian_a(spec, inp, 0), 0)
    pair = make_spec(drift="a", controls=((1.0,), (-1.0,)))
    assert hamiltonian_min(pair, HamiltonianInput(0.0, [0.0], [1.0], [[0.0]])) == (-1.0, 0)
    flipped = make_spec(drift="a", controls=((-1.0,), (1.0,)))
    assert hamiltonian_min(flipped, HamiltonianInput(0.0, [0.0], [1.0], [[0.0]])) == (-1.0, 1)


def test_ties_go_to_lowest_index():
    spec = make_spec(drift="0*a", controls=((1.0,), (-1.0,), (2.0,)))
    assert hamiltonian_min(spec, HamiltonianInput(0.0, [0.0], [1.0], [[1.0]]))[1] == 0


def test_input_is_symmetrised_and_shape_checked():
    inp = HamiltonianInput(0.0, np.zeros(2), np.zeros(2), [[1.0, 2.0], [0.0, 1.0]])
    assert np.array_equal(inp.A, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        HamiltonianInput(0.0, np.zeros(2), np.zeros(3), np.eye(2))


def test_bad_index_and_non_finite_value():
    spec = make_spec(running_cost="1/(x - x)")
    with pytest.raises(IndexError):
        hamiltonian_a(spec, HamiltonianInput(0.0, [0.0], [0.0], [[0.0]]), 1)
    with pytest.raises(SpecError, match="not finite"):
        hamiltonian_a(spec, HamiltonianInput(0.0, [0.0], [0.0], [[0.0]]), 0)


CONTROLLED = spec2d(controls=((-1.0, 0.2), (0.5, 1.0), (1.0, 0.0)),
                    drift=["a1 - x1", "sin(x2) + a2"],
                    diffusion=[["0.5 + a2", "0.1*a1"], ["0", "1 + 0.5*cos(x1)"]],
                    running_cost="a2*a2 + 0.1*x1^2")


@settings(max_examples=60, deadline=None)
@given(finite, arrays(float, 2, elements=finite), arrays(float, 2, elements=finite),
       arrays(float, (2, 2), elements=finite))
def test_minimum_is_below_every_control(t, x, p, A):
    inp = HamiltonianInput(abs(t) / 3, x, p, A)
    value, k = hamiltonian_min(CONTROLLED, inp)
    values = [hamiltonian_a(CONTROLLED, inp, a) for a in range(3)]
    assert value == values[k] and all(value <= v for v in values)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite),
       arrays(float, (2, 2), elements=finite), arrays(float, 2, elements=finite))
def test_monotone_in_the_hessian(x, p, A, v):
    lo = HamiltonianInput(0.5, x, p, A)
    hi = HamiltonianInput(0.5, x, p, lo.A + np.outer(v, v))
    assert hamiltonian_min(CONTROLLED, lo)[0] >= hamiltonian_min(CONTROLLED, hi)[0] - 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite), st.floats(0, 5))
def test_constant_cost_shift(x, p, delta):
    shifted = CONTROLLED.replace(running_cost=f"a2*a2 + 0.1*x1^2 + {delta!r}")
    inp = HamiltonianInput(0.1, x, p, np.eye(2))
    for a in range(3):
        assert hamiltonian_a(shifted, inp, a) == pytest.approx(hamiltonian_a(CONTROLLED, inp, a) - delta,
                                                                abs=1e-12)
