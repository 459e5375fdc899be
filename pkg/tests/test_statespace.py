import math

import numpy as np
import pytest
from scipy.linalg import expm

from flightrts.errors import DivergenceError, LinearizationError
from flightrts.flightmodel import FlightModel, RunwayGeometry, augment
from flightrts.statespace import (
    StateSpaceModel,
    discretize,
    finite_difference,
    jacobian_input,
    jacobian_state,
    propagate,
    rk4_transition,
)


def linear(A):
    A = np.atleast_2d(A)
    n = A.shape[0]
    return StateSpaceModel(n, 1, n, f=lambda x, u, th: A @ x, g=lambda x, u, th: x)


def test_zero_dynamics_unchanged():
    m = StateSpaceModel(3, 1, 3, f=lambda x, u, th: np.zeros(3), g=lambda x, u, th: x)
    x = np.array([1.0, -2.0, 3.0])
    assert (propagate(m, x, np.zeros(1), dt=0.5) == x).all()


def test_scalar_decay():
    x = propagate(linear([[-1.0]]), np.array([1.0]), np.zeros(1), dt=0.1)
    assert abs(x[0] - 0.904837) < 1e-6
    # one RK4 step reproduces the 4th-order Taylor polynomial of exp(-dt)
    h = -0.1
    assert abs(x[0] - (1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24)) < 1e-15
    assert abs(x[0] - math.exp(-0.1)) < 1e-7


def test_triple_integrator_exact():
    A = np.array([[0.0, 1, 0], [0, 0, 1], [0, 0, 0]])
    x = propagate(linear(A), np.array([0.0, 1.0, 0.0]), np.zeros(1), dt=1.0)
    assert x[0] == 1.0


def test_linear_propagation_matches_expm(rng):
    A = rng.normal(size=(4, 4))
    x = rng.normal(size=4)
    dt = 0.01
    got = propagate(linear(A), x, np.zeros(1), dt=dt)
    np.testing.assert_allclose(got, expm(A * dt) @ x, atol=1e-8, rtol=0)


def test_rk4_transition_is_rk4_map(rng):
    A = rng.normal(size=(3, 3))
    x = rng.normal(size=3)
    np.testing.assert_allclose(rk4_transition(A, 0.3) @ x, propagate(linear(A), x, np.zeros(1), dt=0.3),
                               atol=1e-14)


def test_divergence_reports_index():
    m = StateSpaceModel(2, 1, 2, f=lambda x, u, th: np.array([0.0, np.inf]), g=lambda x, u, th: x)
    with pytest.raises(DivergenceError) as exc:
        propagate(m, np.zeros(2), np.zeros(1), dt=1.0)
    assert exc.value.index == 1


def test_identity_output_jacobian():
    m = linear(np.eye(3))
    np.testing.assert_allclose(jacobian_state(m, np.ones(3), np.zeros(1), which="g"), np.eye(3), atol=1e-9)


def test_finite_difference_hand_derivative(rng):
    def fn(v):
        return np.array([np.sin(v[0]) * v[1], v[0] ** 3 + np.exp(v[1])])

    v = rng.normal(size=2)
    hand = np.array([[np.cos(v[0]) * v[1], np.sin(v[0])], [3 * v[0] ** 2, np.exp(v[1])]])
    np.testing.assert_allclose(finite_difference(fn, v), hand, rtol=1e-5)


def test_non_finite_jacobian_is_linearization_error():
    m = StateSpaceModel(1, 1, 1, f=lambda x, u, th: np.sqrt(np.abs(x)), g=lambda x, u, th: x,
                        dfdx=lambda x, u, th: np.array([[np.nan]]))
    with pytest.raises(LinearizationError):
        jacobian_state(m, np.zeros(1), np.zeros(1))


def test_localizer_derivative_at_threshold():
    fm = FlightModel(RunwayGeometry(x_llz=3000.0))
    m = fm.state_space(analytic=False)
    x = augment(np.zeros(27), np.array([0, 0, 0, 0, 0, 0, 0, 1.0, 0]))
    x[0] = 60.0
    x[8] = 50.0
    C = jacobian_state(m, x, np.zeros(21), which="g")
    assert abs(C[10, 7] + 0.00145) < 1e-9


def test_discretize_continuous_and_discrete(rng):
    A = rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 1))
    cont = StateSpaceModel(2, 1, 2, f=lambda x, u, th: A @ x + B @ u, g=lambda x, u, th: x)
    Phi, Gam = discretize(cont, np.zeros(2), np.zeros(1), dt=0.1)
    np.testing.assert_allclose(Phi, rk4_transition(A, 0.1), atol=1e-8)
    np.testing.assert_allclose(Gam, 0.1 * B, atol=1e-9)
    disc = StateSpaceModel(2, 1, 2, f=lambda x, u, th: A @ x + B @ u, g=lambda x, u, th: x, discrete=True)
    Phi, Gam = discretize(disc, np.zeros(2), np.zeros(1))
    np.testing.assert_allclose(Phi, A, atol=1e-8)
    np.testing.assert_allclose(Gam, B, atol=1e-8)
    np.testing.assert_allclose(jacobian_input(disc, np.zeros(2), np.zeros(1)), B, atol=1e-8)


def test_name_defaults_and_mismatch():
    m = linear(np.eye(2))
    assert m.state_names == ("s0", "s1")
    with pytest.raises(ValueError):
        StateSpaceModel(2, 1, 2, f=None, g=None, state_names=("a",))
