"""Feedback-linearizing law, decoupling matrix and the primed steady state."""
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from primer_gait import config, control, models, sim, vc
from primer_gait.errors import ConfigError, TransversalityError

finite = dict(allow_nan=False, allow_infinity=False)
GAINS3 = control.Gains.diagonal(100.0, 20.0, 3)


@pytest.fixture
def vlip_setup():
    model = models.VLIP(mass=4.0)
    coeffs = [[0.3, 0.5, 0.2, 0.3], [0.0, 0.3, 0.1, 0.2], [1.0, 0.9, 1.05, 1.0]]
    path = vc.ReferencePath(np.array(coeffs), "time", np.eye(3), period=1.0)
    return model, path


def test_vlip_decoupling_matrix_is_inverse_inertia_times_b(vlip_setup):
    model, path = vlip_setup
    q = np.array([0.4, 0.2, 0.95])
    state = models.GeneralizedState(q, np.array([0.3, -0.1, 0.2]))
    terms = control.decoupling_and_drift(model, path, state, t=0.3)
    np.testing.assert_allclose(terms.gamma2, np.linalg.inv(model.mass_matrix(q)) @ model.control_matrix(q),
                               atol=1e-12)
    np.testing.assert_array_equal(terms.B_omega, np.vstack([np.eye(3), np.zeros((3, 3))]))


def test_drift_at_rest_on_reference_is_gravity_acceleration(vlip_setup):
    model, path = vlip_setup
    t = 0.45
    r, _, ddr = path.evaluate(t)
    terms = control.decoupling_and_drift(model, path, models.GeneralizedState(r, np.zeros(3)), t=t)
    # with qdot = 0 the output acceleration under zero input is -D^-1 G - r''
    expected = -np.linalg.solve(model.mass_matrix(r), model.gravity_vector(r)) - ddr
    np.testing.assert_allclose(terms.gamma1, expected, atol=1e-10)


def test_chain_decoupling_vanishes_with_transversality():
    model = models.TwoLinkChain()
    path = vc.ReferencePath([[2.0, -2.0]], "state", [[0.0, 1.0]], qn_range=(-0.5, 0.5))
    for x in np.linspace(-0.5, 0.5, 41):
        state = vc.curve_state(model, path, x, 0.0)
        D = model.mass_matrix(state.q)
        g2 = control._output_terms(model, path, state.q, state.qdot, 0.0, D,
                                   models.bias_vector(model, state.q, state.qdot),
                                   model.control_matrix(state.q))[1]
        assert g2[0, 0] == pytest.approx(vc.transversality(model, path, x) / np.linalg.det(D), abs=1e-12)
    with pytest.raises(TransversalityError):
        control.decoupling_and_drift(model, path, vc.curve_state(model, path, np.pi / 12, 0.0))


def test_feedforward_on_manifold(vlip_setup):
    model, path = vlip_setup
    t = 0.2
    r, dr, _ = path.evaluate(t)
    state = models.GeneralizedState(r, dr)
    terms = control.decoupling_and_drift(model, path, state, t=t)
    u = control.fbl_control(model, path, state, np.zeros(3), GAINS3, t=t)
    np.testing.assert_allclose(u, -np.linalg.solve(terms.gamma2, terms.gamma1), atol=1e-10)


def test_closed_loop_output_dynamics_are_linear(vlip_setup):
    model, path = vlip_setup
    I = np.array([0.01, -0.02, 0.005])
    x0 = np.array([0.45, 0.1, 1.02, 0.2, -0.3, 0.1])

    def f(t, x):
        _, qdd = control.closed_loop(model, path, models.GeneralizedState(x[:3], x[3:]), I, GAINS3, t=t)
        return np.concatenate([x[3:], qdd])

    def out(t, x):
        return vc.output_and_derivative(model, path, models.GeneralizedState(x[:3], x[3:]), I, t)

    t, h = 0.3, 1e-4
    xp, xm = sim.rk4_step(f, x0, t, h), sim.rk4_step(f, x0, t, -h)
    yddot = (out(t + h, xp).ydot - out(t - h, xm).ydot) / (2 * h)
    o = out(t, x0)
    np.testing.assert_allclose(yddot + GAINS3.kp @ o.y + GAINS3.kd @ o.ydot, 0.0, atol=1e-4)


def test_doubling_kp_doubles_the_proportional_command(vlip_setup):
    model, path = vlip_setup
    state = models.GeneralizedState(np.array([0.5, 0.05, 0.97]), np.array([0.1, 0.0, -0.2]))
    t = 0.35
    g2 = control.decoupling_and_drift(model, path, state, t=t).gamma2
    y = vc.output_and_derivative(model, path, state, np.zeros(3), t).y
    u1 = control.fbl_control(model, path, state, np.zeros(3), GAINS3, t=t)
    u2 = control.fbl_control(model, path, state, np.zeros(3), control.Gains(2 * GAINS3.kp, GAINS3.kd), t=t)
    np.testing.assert_allclose(g2 @ (u2 - u1), -GAINS3.kp @ y, atol=1e-9)


def test_steady_state_examples():
    gains = control.Gains.diagonal(100.0, 20.0, 1)
    y, yd = control.steady_state_output(gains, 0.0)
    np.testing.assert_array_equal(np.concatenate([y, yd]), [0.0, 0.0])
    y, yd = control.steady_state_output(gains, 0.1)
    np.testing.assert_allclose(y, [-0.02])
    np.testing.assert_allclose(yd, [0.1])
    np.testing.assert_allclose(control.steady_state_residual(gains, 1.0, 0.0), [1.0])


@given(st.lists(st.floats(-1, 1, **finite), min_size=3, max_size=3))
def test_steady_state_lies_on_locus(omega):
    y, yd = control.steady_state_output(GAINS3, omega)
    np.testing.assert_allclose(control.steady_state_residual(GAINS3, y, yd), 0.0, atol=1e-15)


def test_linear_error_system_settles_at_primed_equilibrium():
    gains = control.Gains(np.diag([100.0, 64.0]), np.diag([20.0, 16.0]))
    A, _ = control.output_error_system(gains)
    omega = np.array([0.1, -0.05])
    z0 = np.concatenate([[0.02, -0.01], [0.0, 0.0], [0.0, 0.0], omega])
    # slowest pole is -8 (double): 10 settling constants of 4/8 s
    sol = solve_ivp(lambda t, z: A @ z, (0.0, 5.0), z0, rtol=1e-12, atol=1e-14, method="DOP853")
    y_w, yd_w = control.steady_state_output(gains, omega)
    np.testing.assert_allclose(sol.y[:2, -1], y_w, atol=1e-6)
    np.testing.assert_allclose(sol.y[2:4, -1], yd_w, atol=1e-6)


def test_nonlinear_closed_loop_settles_at_primed_equilibrium():
    base = config.load_config(config.scenario_path("all_safe")).scenario
    omega = np.array([0.02, -0.01, 0.01])
    scenario = replace(base, primer_enabled=False, omega0=omega, t_end=2.0)
    tr = sim.run_scenario(scenario).trace
    y_w, yd_w = control.steady_state_output(scenario.gains, omega)
    np.testing.assert_allclose(tr.y[-1], y_w, atol=1e-6)
    np.testing.assert_allclose(tr.ydot[-1], yd_w, atol=1e-6)


def test_discretize_matches_integration():
    A, B = control.output_error_system(control.Gains.diagonal(100.0, 20.0, 1))
    Phi, Gam = control.discretize(A, B, 0.1)
    z0, a = np.array([0.01, 0.2, -0.03, 0.05]), np.array([0.7])
    sol = solve_ivp(lambda t, z: A @ z + B @ a, (0.0, 0.1), z0, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(Phi @ z0 + Gam @ a, sol.y[:, -1], atol=1e-9)


@pytest.mark.parametrize("kp, kd, key", [
    (np.diag([1.0, -1.0]), np.eye(2), "gains.kp"),
    (np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]), "gains.kd"),
])
def test_gain_validation(kp, kd, key):
    with pytest.raises(ConfigError) as info:
        control.Gains(kp, kd)
    assert info.value.key == key


def test_rank_check():
    control._check_rank(np.eye(2), 1.0)
    with pytest.raises(TransversalityError):
        control._check_rank(np.array([[1.0, 2.0], [2.0, 4.0]]), 5.0)
    with pytest.raises(TransversalityError):
        control._check_rank(np.array([[1e-17]]), 0.5)
