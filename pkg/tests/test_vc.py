"""Bezier references, outputs, transversality and restriction dynamics."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from primer_gait import config, control, models, sim, vc
from primer_gait.errors import ConfigError, TransversalityError, UnsupportedModeError

finite = dict(allow_nan=False, allow_infinity=False)


def bernstein_direct(coeffs, s):
    """Power-sum Bernstein evaluation with math.comb, independent of the package."""
    from math import comb
    c = np.atleast_2d(coeffs)
    d = c.shape[1] - 1
    return sum(c[:, k] * comb(d, k) * s**k * (1 - s) ** (d - k) for k in range(d + 1))


def time_path(coeffs, period=1.0, periodic=False):
    c = np.atleast_2d(coeffs)
    return vc.ReferencePath(c, "time", np.eye(c.shape[0]), period=period, periodic=periodic)


def state_path(coeffs, qn_range=(-0.5, 0.5)):
    return vc.ReferencePath(np.atleast_2d(coeffs), "state", [[0.0, 1.0]], qn_range=qn_range)


coeff_rows = st.lists(st.floats(-2, 2, **finite), min_size=2, max_size=9)


# Bezier evaluation

@given(coeff_rows, st.floats(0, 1, **finite))
def test_de_casteljau_matches_bernstein_sum(row, s):
    val, _, _ = vc.bezier(np.array([row]), s)
    np.testing.assert_allclose(val, bernstein_direct(row, s), atol=1e-12)


@given(coeff_rows, st.floats(0.01, 0.99, **finite))
def test_eval_reference_agrees_with_de_casteljau(row, s):
    path = time_path([row], period=2.0)
    r, dr, ddr = vc.eval_reference(path, s)
    c0, c1, c2 = vc.bezier(np.array([row]), s)
    np.testing.assert_allclose(r, c0, atol=1e-12)
    np.testing.assert_allclose(dr, c1 / 2.0, atol=1e-10)
    np.testing.assert_allclose(ddr, c2 / 4.0, atol=1e-8)


def test_eval_reference_derivatives_match_finite_differences():
    rng = np.random.default_rng(3)
    path = time_path(rng.normal(size=(3, 8)), period=0.7)
    t, h = 0.31, 1e-5
    r, dr, ddr = path.evaluate(t)
    rp, rm = path.evaluate(t + h)[0], path.evaluate(t - h)[0]
    np.testing.assert_allclose(dr, (rp - rm) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(ddr, (rp - 2 * r + rm) / h**2, rtol=1e-4, atol=1e-3)


@given(st.floats(-3, 3, **finite), st.floats(0, 1, **finite))
def test_constant_curve(c, s):
    r, dr, ddr = vc.eval_reference(time_path([[c, c, c]]), s)
    np.testing.assert_allclose([r[0], dr[0], ddr[0]], [c, 0.0, 0.0], atol=1e-12)


def test_linear_curve_at_midpoint():
    path = state_path([[0.0, 1.0]], qn_range=(0.0, 0.25))
    r, dr, ddr = vc.eval_reference(path, 0.5)
    np.testing.assert_allclose([r[0], dr[0], ddr[0]], [0.5, 4.0, 0.0])


def test_periodic_phase_wraps():
    path = time_path([[0.0, 1.0, -1.0, 0.0]], period=0.5, periodic=True)
    np.testing.assert_allclose(path.evaluate(0.1)[0], path.evaluate(0.6)[0], atol=1e-12)
    assert path.closure_residual() < 1e-12


@pytest.mark.parametrize("kwargs, key", [
    (dict(coeffs=[[1.0]], mode="time", selector=[[1.0]], period=1.0), "references.coeffs"),
    (dict(coeffs=[[0.0, 1.0]], mode="state", selector=[[0.0, 1.0]], qn_range=(1.0, 1.0)),
     "references.qn_range"),
    (dict(coeffs=[[0.0, 1.0]], mode="time", selector=[[1.0]], period=1.0, periodic=True),
     "references.coeffs"),
    (dict(coeffs=[[0.0, 1.0]], mode="time", selector=[[1.0]], period=0.0), "references.period"),
    (dict(coeffs=[[0.0, 1.0], [1.0, 0.0]], mode="time", selector=[[1.0, 0.0], [2.0, 0.0]], period=1.0),
     "references.selector"),
])
def test_invalid_paths_name_the_key(kwargs, key):
    with pytest.raises(ConfigError) as info:
        vc.ReferencePath(**kwargs)
    assert info.value.key == key


# outputs

def test_on_reference_output_vanishes():
    model = models.VLIP()
    path = time_path([[0.3, 0.4, 0.35], [0.0, 0.1, 0.2], [1.0, 0.9, 1.0]])
    t = 0.4
    r, dr, _ = path.evaluate(t)
    out = vc.output_and_derivative(model, path, models.GeneralizedState(r, dr), np.zeros(3), t)
    np.testing.assert_allclose(out.y, 0.0, atol=1e-15)
    np.testing.assert_allclose(out.ydot, 0.0, atol=1e-15)


def test_output_rate_equals_ydot_minus_primer():
    """Along a trajectory with a primer integral, d/dt y = ydot - omega."""
    model = models.VLIP()
    path = time_path([[0.3, 0.5, 0.2, 0.4], [0.0, 0.2, 0.1, 0.3], [1.0, 0.8, 1.1, 1.0]])

    def q_of(t):
        return np.array([0.5 + 0.1 * np.sin(2 * t), 0.3 * t, 1.0 + 0.05 * np.cos(3 * t)])

    def qd_of(t):
        return np.array([0.2 * np.cos(2 * t), 0.3, -0.15 * np.sin(3 * t)])

    def I_of(t):
        return np.array([0.1 * np.sin(t), 0.05 * t**2, -0.02 * t])

    def omega_of(t):
        return np.array([0.1 * np.cos(t), 0.1 * t, -0.02])

    def y_of(t):
        return vc.output_and_derivative(model, path, models.GeneralizedState(q_of(t), qd_of(t)),
                                        I_of(t), t).y

    for t in (0.2, 0.55, 0.9):
        h = 1e-6
        rate = (y_of(t + h) - y_of(t - h)) / (2 * h)
        out = vc.output_and_derivative(model, path, models.GeneralizedState(q_of(t), qd_of(t)), I_of(t), t)
        np.testing.assert_allclose(rate, out.ydot - omega_of(t), atol=1e-7)


def test_constant_primer_shifts_output_rate_by_its_value():
    model = models.VLIP()
    path = time_path([[0.3, 0.4], [0.0, 0.1], [1.0, 1.1]])
    r, dr, _ = path.evaluate(0.0)
    c = np.array([0.05, -0.02, 0.01])
    h = 1e-6
    state = models.GeneralizedState(r, dr)
    y0 = vc.output_and_derivative(model, path, state, np.zeros(3), 0.0).y
    r1, dr1, _ = path.evaluate(h)
    y1 = vc.output_and_derivative(model, path, models.GeneralizedState(r + dr * h, dr), c * h, h).y
    np.testing.assert_allclose((y1 - y0) / h, -c, atol=1e-6)


# transversality and restriction dynamics

def chain_D(q, m=(1.0, 1.0), l=(0.5, 0.5)):
    lc1, lc2 = l[0] / 2, l[1] / 2
    c = np.cos(q[1])
    d11 = m[0] * lc1**2 + m[1] * (l[0] ** 2 + lc2**2 + 2 * l[0] * lc2 * c)
    d12 = m[1] * (lc2**2 + l[0] * lc2 * c)
    return np.array([[d11, d12], [d12, m[1] * lc2**2]])


def chain_G(q, m=(1.0, 1.0), l=(0.5, 0.5), g=9.81):
    lc1, lc2 = l[0] / 2, l[1] / 2
    return g * np.array([m[0] * lc1 * np.sin(q[0]) + m[1] * (l[0] * np.sin(q[0]) + lc2 * np.sin(q[0] + q[1])),
                         m[1] * lc2 * np.sin(q[0] + q[1])])


@given(st.floats(-0.5, 0.5, **finite), st.floats(-2, 2, **finite))
def test_transversality_of_constant_reference_is_passive_inertia(qn, c):
    model = models.TwoLinkChain()
    alpha = vc.transversality(model, state_path([[c, c]]), qn)
    assert alpha == pytest.approx(chain_D([qn, c])[0, 0], abs=1e-12)
    assert alpha > 0


def test_engineered_transversality_root():
    model = models.TwoLinkChain()
    path = state_path([[2.0, -2.0]])  # q2 = -4 q1

    def alpha_oracle(x):
        D = chain_D([x, -4 * x])
        return D[0, 0] - 4 * D[0, 1]

    root = brentq(alpha_oracle, 0.1, 0.4, xtol=1e-15)
    assert root == pytest.approx(np.pi / 12, abs=1e-12)
    assert abs(vc.transversality(model, path, root)) < 1e-12
    for x in (-0.4, -0.1, 0.0, 0.3):
        assert vc.transversality(model, path, x) == pytest.approx(alpha_oracle(x), abs=1e-12)
    with pytest.raises(TransversalityError) as info:
        vc.restriction_dynamics(model, path, root, 0.5)
    assert info.value.location == pytest.approx(root)


def test_time_based_path_rejected_by_transversality():
    with pytest.raises(UnsupportedModeError):
        vc.transversality(models.TwoLinkChain(), time_path([[0.0, 1.0], [0.0, 1.0]]), 0.0)


@given(st.floats(-0.5, 0.5, **finite), st.floats(-1.5, 1.5, **finite))
def test_restriction_at_rest_on_constant_reference_is_pendulum_acceleration(qn, c):
    model = models.TwoLinkChain()
    q = np.array([qn, c])
    expected = -chain_G(q)[0] / chain_D(q)[0, 0]
    assert vc.restriction_dynamics(model, state_path([[c, c]]), qn, 0.0) == pytest.approx(expected, abs=1e-10)


def test_hanging_equilibrium_of_zero_dynamics():
    model = models.TwoLinkChain()
    assert vc.restriction_dynamics(model, state_path([[0.0, 0.0]]), 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-0.45, 0.45, **finite), st.floats(-2, 2, **finite))
def test_restriction_matches_closed_loop_acceleration_on_manifold(qn, qdn):
    model = models.TwoLinkChain()
    path = state_path([[0.3, -0.2, 0.5]])
    gains = control.Gains.diagonal(100.0, 20.0, 1)
    state = vc.curve_state(model, path, qn, qdn)
    _, qdd = control.closed_loop(model, path, state, None, gains)
    assert vc.restriction_dynamics(model, path, qn, qdn) == pytest.approx(qdd[0], abs=1e-8)


def test_restriction_dynamics_reproduce_full_simulation():
    cfg = config.load_config(config.scenario_path("two_link_constant"))
    scenario = cfg.scenario
    res = sim.run_scenario(scenario)
    model, path = scenario.model, scenario.path
    q0 = scenario.q0
    sol = solve_ivp(lambda t, x: [x[1], vc.restriction_dynamics(model, path, x[0], x[1])],
                    (0.0, scenario.t_end), [q0[0], 0.0], t_eval=res.trace.t, rtol=1e-11, atol=1e-12)
    err = np.max(np.abs(res.trace.q[:, 0] - sol.y[0]))
    assert err < 1e-3
