"""Feedback-linearizing PD tracking and the primer steady-state maps.

With ``yddot = gamma1 + gamma2 u`` the law

    u = -gamma2^+ (gamma1 + Kp y + Kd ydot)

renders the output error dynamics linear.  The primer ``omega`` enters the
position channel only (``d/dt y = ydot - omega``), so under a constant primer
the loop settles at ``ydot = omega`` and ``y = -Kp^-1 Kd omega``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import models
from .errors import ConfigError, TransversalityError

__all__ = [
    "Gains",
    "OutputDynamicsTerms",
    "decoupling_and_drift",
    "fbl_control",
    "closed_loop",
    "steady_state_output",
    "steady_state_residual",
    "output_error_system",
]


def _as_gain_matrix(value, k, key):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = np.full(k, float(a))
    if a.ndim == 1:
        a = np.diag(a)
    if a.shape != (k, k):
        raise ConfigError(f"gain {key} must be {k}x{k}, got {a.shape}", key=f"gains.{key}")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ConfigError(f"gain {key} must be symmetric", key=f"gains.{key}")
    if np.linalg.eigvalsh(a).min() <= 0:
        raise ConfigError(f"gain {key} must be positive definite", key=f"gains.{key}")
    return a


@dataclass(frozen=True, eq=False)
class Gains:
    """PD gains; scalars or vectors are promoted to diagonal matrices."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        k = next((np.shape(g)[0] for g in (self.kp, self.kd) if np.ndim(g)), 1)
        object.__setattr__(self, "kp", _as_gain_matrix(self.kp, k, "kp"))
        object.__setattr__(self, "kd", _as_gain_matrix(self.kd, k, "kd"))

    @classmethod
    def diagonal(cls, kp, kd, k):
        return cls(np.full(k, float(kp)), np.full(k, float(kd)))

    @property
    def size(self):
        return self.kp.shape[0]

    def lag(self):
        """``Kp^-1 Kd``."""
        return np.linalg.solve(self.kp, self.kd)


@dataclass(frozen=True, eq=False)
class OutputDynamicsTerms:
    gamma1: np.ndarray
    gamma2: np.ndarray
    B_omega: np.ndarray


def _output_terms(model, path, q, qd, t, D, Hb, B, ref=None):
    x, xdot = path.native_parameter(model, q, qd, t)
    _, dr, ddr = path.evaluate(x) if ref is None else ref
    P = path.selector
    if path.mode == "state":
        P = P.copy()
        P[:, model.unactuated_index] -= dr
    drift = models._solve_spd(D, np.column_stack([-Hb, B]), model.coord_names)
    gamma1 = P @ drift[:, 0] - ddr * xdot * xdot
    gamma2 = P @ drift[:, 1:]
    scale = np.linalg.norm(P, 2) * np.linalg.norm(drift[:, 1:], 2)
    return gamma1, gamma2, scale


def _check_rank(gamma2, scale, tol=1e-9):
    """Reject ``gamma2`` whose smallest singular value is below ``tol`` times the
    product of its factor norms (the bound it would attain with orthogonal factors)."""
    k, m = gamma2.shape
    sv = np.linalg.svd(gamma2, compute_uv=False)
    if k > m or not sv[-1] > tol * scale:
        raise TransversalityError("decoupling matrix is rank-deficient")


def decoupling_and_drift(model, path, state, t=0.0):
    """``gamma1`` (drift of yddot) and ``gamma2`` (input-to-yddot) at ``state``."""
    q, qd = state.q, state.qdot
    D = model.mass_matrix(q)
    Hb = models.bias_vector(model, q, qd)
    B = model.control_matrix(q)
    g1, g2, scale = _output_terms(model, path, q, qd, t, D, Hb, B)
    _check_rank(g2, scale)
    k = path.rows
    B_omega = np.vstack([np.eye(k), np.zeros((k, k))])
    return OutputDynamicsTerms(g1, g2, B_omega)


def _law(g1, g2, y, ydot, gains, v):
    rhs = g1 + gains.kp @ y + gains.kd @ ydot
    if v is not None:
        rhs = rhs - v
    if g2.shape[0] == g2.shape[1]:
        return -np.linalg.solve(g2, rhs)
    return -np.linalg.pinv(g2) @ rhs


def fbl_control(model, path, state, omega_integral, gains, t=0.0, v=None):
    """Feedback-linearizing input.

    ``v`` is an optional extra output-acceleration command added to the
    closed-loop error dynamics ``yddot = -Kp y - Kd ydot + v``.
    """
    u, _ = closed_loop(model, path, state, omega_integral, gains, t=t, v=v)
    return u


def closed_loop(model, path, state, omega_integral, gains, t=0.0, v=None):
    """Return ``(u, qddot)`` of the closed loop at ``state`` (one mass-matrix factorization)."""
    q, qd = state.q, state.qdot
    D = model.mass_matrix(q)
    Hb = models.bias_vector(model, q, qd)
    B = model.control_matrix(q)
    x, xdot = path.native_parameter(model, q, qd, t)
    ref = path.evaluate(x)
    g1, g2, scale = _output_terms(model, path, q, qd, t, D, Hb, B, ref)
    _check_rank(g2, scale)
    r, dr, _ = ref
    y = path.selector @ q - r
    if omega_integral is not None:
        y = y - omega_integral
    ydot = path.selector @ qd - dr * xdot
    u = _law(g1, g2, y, ydot, gains, v)
    qdd = models._solve_spd(D, -Hb + B @ u, model.coord_names)
    return u, qdd


def steady_state_output(gains, omega):
    """Closed-loop equilibrium ``(y_w, ydot_w) = (-Kp^-1 Kd omega, omega)`` under a constant primer."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    return -gains.lag() @ omega, omega.copy()


def steady_state_residual(gains, y, ydot):
    """Membership residual of the steady-state locus: ``y + Kp^-1 Kd ydot``."""
    return np.atleast_1d(np.asarray(y, float)) + gains.lag() @ np.atleast_1d(np.asarray(ydot, float))


def output_error_system(gains):
    """Linear closed-loop output dynamics for ``z = [y, ydot, I, omega]`` with input ``omega_dot``.

    Returns ``(A, B)`` such that ``dz/dt = A z + B omega_dot``.
    """
    k = gains.size
    I, Z = np.eye(k), np.zeros((k, k))
    A = np.block([
        [Z, I, Z, -I],
        [-gains.kp, -gains.kd, Z, Z],
        [Z, Z, Z, I],
        [Z, Z, Z, Z],
    ])
    B = np.vstack([Z, Z, Z, I])
    return A, B


def discretize(A, B, h):
    """Zero-order-hold transition ``(Phi, Gamma)`` over horizon ``h``."""
    nz, nu = B.shape
    M = np.zeros((nz + nu, nz + nu))
    M[:nz, :nz] = A
    M[:nz, nz:] = B
    E = scipy.linalg.expm(M * h)
    return E[:nz, :nz], E[:nz, nz:]
