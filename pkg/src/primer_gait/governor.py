"""Optimization-free primer: constraint margins and the primer update law.

The governor never solves an optimization problem.  Each step it

1. forecasts the closed loop a few short horizons ahead (the output error
   dynamics are linear once the virtual constraints are feedback-linearized,
   so the forecast is a matrix product) with the primer rate held fixed,
2. evaluates the stacked inequality margins ``C_ineq >= 0`` on the forecast
   states and their sensitivity to the primer rate by central differences,
3. combines an attraction term pulling the primer back to the target
   reference with gradient repulsion from margins that dropped below their
   activation level, and saturates the result.

Constraint margins are normalized, ``m_i = C_i / s_i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import control, models
from .errors import UnsupportedModeError

log = logging.getLogger(__name__)

__all__ = [
    "Constraint",
    "ConstraintSpec",
    "Prediction",
    "PrimerParams",
    "PrimerState",
    "Governor",
    "raw_margins",
    "constraint_margins",
    "predict_steady_state",
    "margin_gradient",
    "finite_difference_jacobian",
    "primer_update",
]

THETA_MIN_DEFAULT = np.deg2rad(5.0)
DEFAULT_SCALES = {
    "theta_min": THETA_MIN_DEFAULT,
    "friction_x": 20.0,
    "friction_y": 20.0,
    "normal_min": 20.0,
}


@dataclass(frozen=True, eq=False)
class Prediction:
    """A (predicted or measured) closed-loop sample used to evaluate constraints."""

    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray | None = None
    u: np.ndarray | None = None
    grf: models.GroundReaction | None = None
    omega: np.ndarray | None = None
    omega_dot: np.ndarray | None = None


@dataclass(frozen=True)
class Constraint:
    """User constraint ``fn(prediction) >= 0``."""

    name: str
    fn: Callable[[Prediction], float]
    scale: float = 1.0
    eps: float = 0.1


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Stacked inequality constraints.

    Built-in constraints are enabled by giving their parameter:

    ``theta_min``   q[theta_index] - theta_min >= 0
    ``friction_x``  mu Fz - |Fx| >= 0
    ``friction_y``  mu Fz - |Fy| >= 0
    ``normal_min``  Fz - fz_min >= 0

    Optional input box bounds add ``u_upper - u >= 0`` and ``u - u_lower >= 0``.
    """

    mu: float | None = 0.6
    theta_min: float | None = THETA_MIN_DEFAULT
    fz_min: float | None = 20.0
    theta_index: int = 0
    scales: dict = field(default_factory=dict)
    eps: dict = field(default_factory=dict)
    default_eps: float = 0.1
    u_lower: np.ndarray | None = None
    u_upper: np.ndarray | None = None
    u_scale: float = 1.0
    extra: tuple = ()

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0:
            raise ValueError("friction coefficient mu must be positive")
        for name, s in self.scales.items():
            if not s > 0:
                raise ValueError(f"scale for {name!r} must be positive")
        if not self.u_scale > 0:
            raise ValueError("u_scale must be positive")
        for c in self.extra:
            if not c.scale > 0:
                raise ValueError(f"scale for {c.name!r} must be positive")

    def _builtin(self):
        out = []
        if self.theta_min is not None:
            out.append("theta_min")
        if self.mu is not None:
            out += ["friction_x", "friction_y"]
        if self.fz_min is not None:
            out.append("normal_min")
        return out

    def names(self, n_inputs=None):
        names = self._builtin()
        if self.u_upper is not None:
            names += [f"u_upper_{i}" for i in range(len(self.u_upper))]
        if self.u_lower is not None:
            names += [f"u_lower_{i}" for i in range(len(self.u_lower))]
        names += [c.name for c in self.extra]
        return names

    def scale_vector(self):
        s = [self.scales.get(n, DEFAULT_SCALES[n]) for n in self._builtin()]
        n_box = (0 if self.u_upper is None else len(self.u_upper)) + (
            0 if self.u_lower is None else len(self.u_lower))
        s += [self.u_scale] * n_box
        s += [c.scale for c in self.extra]
        return np.array(s, dtype=float)

    def eps_vector(self):
        e = [self.eps.get(n, self.default_eps) for n in self._builtin()]
        n_box = (0 if self.u_upper is None else len(self.u_upper)) + (
            0 if self.u_lower is None else len(self.u_lower))
        e += [self.default_eps] * n_box
        e += [c.eps for c in self.extra]
        return np.array(e, dtype=float)

    @property
    def needs_input(self):
        return self.u_upper is not None or self.u_lower is not None or bool(self.extra)


def raw_margins(spec, pred):
    """Unnormalized constraint values ``C_i`` (feasible when >= 0)."""
    out = []
    if spec.theta_min is not None:
        out.append(pred.q[spec.theta_index] - spec.theta_min)
    if spec.mu is not None or spec.fz_min is not None:
        F = pred.grf
        if spec.mu is not None:
            out.append(spec.mu * F.Fz - abs(F.Fx))
            out.append(spec.mu * F.Fz - abs(F.Fy))
        if spec.fz_min is not None:
            out.append(F.Fz - spec.fz_min)
    if spec.u_upper is not None:
        out.extend(np.asarray(spec.u_upper) - pred.u)
    if spec.u_lower is not None:
        out.extend(pred.u - np.asarray(spec.u_lower))
    out.extend(c.fn(pred) for c in spec.extra)
    return np.array(out, dtype=float)


def constraint_margins(spec, state, grf, u):
    """Normalized margins ``C_i / s_i`` of a state, its ground reaction and input."""
    pred = Prediction(np.asarray(state.q, float), np.asarray(state.qdot, float), grf=grf,
                      u=None if u is None else np.asarray(u, float))
    return raw_margins(spec, pred) / spec.scale_vector()


@dataclass(frozen=True)
class PrimerParams:
    """Governor parameters.

    kappa_a : attraction gain [1/s]; the primer returns to zero critically damped
        at rate ``kappa_a / 2``
    kappa_r : repulsion gain (1 = exact projection onto one active linearized margin)
    omega_dot_max : bound on every channel of the primer rate (scalar or per channel)
    delta : finite-difference step for margin sensitivities
    horizons : forecast horizons [s] at which margins are evaluated
    """

    kappa_a: float = 5.0
    kappa_r: float = 2.0
    omega_dot_max: float | tuple = 5.0
    delta: float = 1e-4
    horizons: tuple = (0.05, 0.1, 0.2)

    def __post_init__(self):
        if not (self.kappa_a >= 0 and self.kappa_r >= 0 and self.delta > 0):
            raise ValueError("kappa_a, kappa_r must be non-negative and delta positive")
        if np.any(np.asarray(self.omega_dot_max, float) <= 0):
            raise ValueError("omega_dot_max must be positive")
        if not self.horizons or min(self.horizons) <= 0:
            raise ValueError("horizons must be a non-empty tuple of positive times")


@dataclass
class PrimerState:
    omega: np.ndarray
    omega_integral: np.ndarray
    params: PrimerParams = field(default_factory=PrimerParams)

    @classmethod
    def zeros(cls, k, params=None):
        return cls(np.zeros(k), np.zeros(k), params or PrimerParams())


def _inverse_dynamics(model, q, qd, qdd):
    rhs = model.mass_matrix(q) @ qdd + models.bias_vector(model, q, qd)
    B = model.control_matrix(q)
    if B.shape[0] == B.shape[1]:
        return np.linalg.solve(B, rhs)
    return np.linalg.lstsq(B, rhs, rcond=None)[0]


def predict_steady_state(model, path, gains, omega, state, omega_integral=None, t=0.0):
    """Closed-loop steady state under a constant primer at the current path parameter.

    The actuated coordinates are moved to the primed reference offset by the
    equilibrium output ``(y_w, ydot_w)``; the unactuated coordinate (if any) is
    held.  Input and ground reaction are those of the feedback law there.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    I = np.zeros_like(omega) if omega_integral is None else np.asarray(omega_integral, float)
    q, qd = state.q.copy(), state.qdot.copy()
    x, xdot = path.native_parameter(model, q, qd, t)
    r, dr, _ = path.evaluate(x)
    y_w, ydot_w = control.steady_state_output(gains, omega)
    target_q = r + I + y_w
    target_qd = dr * xdot + ydot_w
    H = path.selector
    if H.shape[0] == H.shape[1]:
        q = np.linalg.solve(H, target_q)
        qd = np.linalg.solve(H, target_qd)
    else:
        idx = path.actuated_coords()
        q[idx] = target_q
        qd[idx] = target_qd
    pstate = models.GeneralizedState(q, qd)
    u, qdd = control.closed_loop(model, path, pstate, I, gains, t=t)
    grf = model.ground_reaction(q, qd, qdd)
    return Prediction(q, qd, qdd, u, grf, omega=omega, omega_dot=np.zeros_like(omega))


def finite_difference_jacobian(fn, x0, delta):
    """Central-difference Jacobian of vector function ``fn`` at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = delta
        cols.append((fn(x0 + e) - fn(x0 - e)) / (2.0 * delta))
    return np.column_stack(cols)


def margin_gradient(model, path, gains, spec, omega, state, omega_integral=None, t=0.0, delta=1e-4):
    """Sensitivity of steady-state margins to the primer, ``d m / d omega``."""

    def fn(w):
        p = predict_steady_state(model, path, gains, w, state, omega_integral, t)
        return raw_margins(spec, p) / spec.scale_vector()

    return finite_difference_jacobian(fn, np.atleast_1d(np.asarray(omega, float)), delta)


def primer_update(params, omega, omega_integral, margins, gradient, eps, groups=None,
                  grad_tol=1e-9):
    """Primer rate from attraction plus gradient repulsion.

    Attraction: ``-kappa_a * (omega + D * kappa_a/4 * I)`` with the safety
    factor ``D = clip(min(margins), 0, 1)``; the primer itself is always
    damped, the pull of ``I`` back to zero fades out near the constraints.  Repulsion: for every constraint
    group, the row with the largest deficit ``eps - m`` (margins linearized
    after the attraction step) contributes ``kappa_r * deficit * g / |g|^2``.
    The sum is scaled down uniformly so each channel obeys ``omega_dot_max``.
    """
    omega = np.asarray(omega, dtype=float)
    I = np.asarray(omega_integral, dtype=float)
    margins = np.asarray(margins, dtype=float)
    G = np.atleast_2d(np.asarray(gradient, dtype=float))
    eps = np.broadcast_to(np.asarray(eps, dtype=float), margins.shape)
    if groups is None:
        groups = np.arange(margins.size)
    groups = np.asarray(groups)

    delta_plus = float(np.clip(margins.min(), 0.0, 1.0)) if margins.size else 1.0
    ka = params.kappa_a
    attraction = -ka * (omega + delta_plus * 0.25 * ka * I)

    m_lin = margins + G @ attraction
    deficit = eps - m_lin
    g2 = np.einsum("ij,ij->i", G, G)
    usable = (deficit > 0) & (g2 > grad_tol**2)
    repulsion = np.zeros_like(omega)
    for gid in np.unique(groups[usable]):
        rows = np.flatnonzero(usable & (groups == gid))
        i = rows[np.argmax(deficit[rows])]
        repulsion += deficit[i] * G[i] / g2[i]

    rate = attraction + params.kappa_r * repulsion
    limit = np.broadcast_to(np.asarray(params.omega_dot_max, dtype=float), rate.shape)
    ratio = np.max(np.abs(rate) / limit) if rate.size else 0.0
    if ratio > 1.0:
        log.debug("primer rate saturated by factor %.3f", ratio)
        rate = rate / ratio
    return rate


class Governor:
    """Forecast-based primer for time-parameterized, fully actuated outputs."""

    def __init__(self, model, path, gains, spec, params):
        if path.mode != "time":
            raise UnsupportedModeError("the primer forecast needs a time-based path")
        if path.selector.shape[0] != model.n:
            raise UnsupportedModeError("the primer forecast needs one output per coordinate")
        self.model = model
        self.path = path
        self.gains = gains
        self.spec = spec
        self.params = params
        self.k = path.rows
        self._Hinv = np.linalg.inv(path.selector)
        self._scales = spec.scale_vector()
        self._eps = spec.eps_vector()
        A, B = control.output_error_system(gains)
        self._trans = [control.discretize(A, B, h) for h in params.horizons]
        n_c = len(self._scales)
        self.groups = np.tile(np.arange(n_c), len(params.horizons))

    def _outputs(self, t, state, omega, omega_integral):
        r, dr, _ = self.path.evaluate(t)
        y = self.path.selector @ state.q - r - omega_integral
        ydot = self.path.selector @ state.qdot - dr
        return np.concatenate([y, ydot, omega_integral, omega])

    def forecast(self, t, state, omega, omega_integral, omega_dot):
        """Closed-loop samples at each horizon with the primer rate held at ``omega_dot``."""
        z = self._outputs(t, state, np.asarray(omega, float), np.asarray(omega_integral, float))
        refs = [self.path.evaluate(t + h) for h in self.params.horizons]
        return [self._sample(Phi @ z + Gam @ omega_dot, ref, omega_dot)
                for (Phi, Gam), ref in zip(self._trans, refs)]

    def _sample(self, zh, ref, omega_dot):
        k = self.k
        y, ydot, I, w = zh[:k], zh[k:2 * k], zh[2 * k:3 * k], zh[3 * k:]
        r, dr, ddr = ref
        yddot = -self.gains.kp @ y - self.gains.kd @ ydot
        q = self._Hinv @ (r + y + I)
        qd = self._Hinv @ (dr + ydot)
        qdd = self._Hinv @ (ddr + yddot)
        u = _inverse_dynamics(self.model, q, qd, qdd) if self.spec.needs_input else None
        grf = self.model.ground_reaction(q, qd, qdd)
        return Prediction(q, qd, qdd, u, grf, omega=w, omega_dot=omega_dot)

    def forecast_margins(self, t, state, omega, omega_integral, omega_dot):
        preds = self.forecast(t, state, omega, omega_integral, omega_dot)
        return np.concatenate([raw_margins(self.spec, p) / self._scales for p in preds])

    def update(self, t, state, omega, omega_integral):
        """Primer rate ``omega_dot`` at time ``t`` and the forecast margins it used."""
        omega = np.asarray(omega, float)
        omega_integral = np.asarray(omega_integral, float)
        z = self._outputs(t, state, omega, omega_integral)
        refs = [self.path.evaluate(t + h) for h in self.params.horizons]
        base = [Phi @ z for Phi, _ in self._trans]

        def fn(a):
            return np.concatenate([
                raw_margins(self.spec, self._sample(b + Gam @ a, ref, a)) / self._scales
                for b, (_, Gam), ref in zip(base, self._trans, refs)])

        a0 = np.zeros(self.k)
        m0 = fn(a0)
        G = finite_difference_jacobian(fn, a0, self.params.delta)
        eps = np.tile(self._eps, len(self.params.horizons))
        rate = primer_update(self.params, omega, omega_integral, m0, G, eps, self.groups)
        return rate, m0
