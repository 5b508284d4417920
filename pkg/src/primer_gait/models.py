"""Euler-Lagrange rigid-body layer and the two concrete models.

Every model provides the inertia matrix ``D(q)``, its partial derivatives,
the potential energy and gravity vector ``G(q) = dV/dq``, and the control
matrix ``B(q)``.  Christoffel symbols, the bias vector ``H = C(q, qd) qd + G``
and forward dynamics are assembled generically from those pieces:

    D(q) qdd + H(q, qd) = B(q) u

Models
------
VLIP
    Variable-length inverted pendulum: a point mass on a massless prismatic
    leg pinned at the stance contact point.  Coordinates ``[theta, phi, L]``
    (pendulum angle from the ground normal, heading, leg length).
TwoLinkChain
    Planar two-link chain hanging from a passive shoulder, actuated at the
    elbow only.  Coordinates ``[q1, q2]`` with ``q1`` the absolute shoulder
    angle from the downward vertical and ``q2`` the relative elbow angle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidStateError, SingularConfigurationError

__all__ = [
    "GeneralizedState",
    "DynamicsTerms",
    "GroundReaction",
    "Model",
    "VLIP",
    "TwoLinkChain",
    "mass_matrix",
    "gravity_vector",
    "christoffel",
    "coriolis_matrix",
    "bias_vector",
    "control_matrix",
    "dynamics_terms",
    "forward_dynamics",
    "ground_reaction",
    "total_energy",
]


def _as_vector(x, n, name):
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n,):
        raise InvalidStateError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"{name} has non-finite entries: {arr}")
    return arr


@dataclass(frozen=True, eq=False)
class GeneralizedState:
    """Configuration ``q`` and velocity ``qdot`` of a model."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qdot = np.asarray(self.qdot, dtype=float)
        if q.ndim != 1 or q.shape != qdot.shape:
            raise InvalidStateError(f"q and qdot must be 1-D of equal length, got {q.shape} and {qdot.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise InvalidStateError("state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @property
    def n(self):
        return self.q.shape[0]

    def as_vector(self):
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0] // 2
        return cls(x[:n], x[n:])


@dataclass(frozen=True, eq=False)
class DynamicsTerms:
    D: np.ndarray
    H: np.ndarray
    G: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class GroundReaction:
    """Contact force at the stance point: tangential ``Fx, Fy`` and normal ``Fz`` [N]."""

    Fx: float
    Fy: float
    Fz: float

    def as_array(self):
        return np.array([self.Fx, self.Fy, self.Fz])


class Model:
    """Base class for Lagrangian models with a configuration-only inertia matrix.

    Subclasses set ``coord_names``, ``input_names``, ``mass`` and ``gravity`` and
    implement :meth:`mass_matrix`, :meth:`mass_matrix_jacobian`, :meth:`potential`,
    :meth:`gravity_vector`, :meth:`control_matrix` and :meth:`ground_reaction`.
    """

    coord_names: tuple = ()
    input_names: tuple = ()
    # index of the single unactuated coordinate for one-DOU models, else None
    unactuated_index: int | None = None

    @property
    def n(self):
        return len(self.coord_names)

    @property
    def m(self):
        return len(self.input_names)

    @property
    def actuated_indices(self):
        return tuple(i for i in range(self.n) if i != self.unactuated_index)

    def mass_matrix(self, q):
        raise NotImplementedError

    def mass_matrix_jacobian(self, q):
        """Array ``dD`` with ``dD[i, j, k] = dD_ij / dq_k``."""
        raise NotImplementedError

    def potential(self, q):
        raise NotImplementedError

    def gravity_vector(self, q):
        raise NotImplementedError

    def control_matrix(self, q):
        raise NotImplementedError

    def ground_reaction(self, q, qdot, qddot):
        raise NotImplementedError

    def check_state(self, q, qdot):
        """Model-specific validity test for initial states. Raises on failure."""
        _as_vector(q, self.n, "q")
        _as_vector(qdot, self.n, "qdot")


class VLIP(Model):
    """Variable-length inverted pendulum in 3-D.

    The point mass sits at ``p_1 + L [sin(th) cos(ph), sin(th) sin(ph), cos(th)]``.
    Thrusters act as direct generalized torques on ``theta`` and ``phi``; the leg
    actuator is a direct axial force on ``L``.  ``channels`` fixes the ordering
    of the input vector.
    """

    coord_names = ("theta", "phi", "L")
    _channel_coord = {"leg": 2, "tau_theta": 0, "tau_phi": 1}
    # below this the azimuth row of D is treated as singular
    min_theta = 0.01

    def __init__(self, mass=1.0, gravity=9.81, channels=("leg", "tau_theta", "tau_phi")):
        if not mass > 0 or not gravity > 0:
            raise ValueError("mass and gravity must be positive")
        channels = tuple(channels)
        unknown = set(channels) - set(self._channel_coord)
        if unknown or len(set(channels)) != len(channels):
            raise ValueError(f"invalid VLIP channels {channels}")
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.input_names = channels
        self._B = np.zeros((3, len(channels)))
        for col, name in enumerate(channels):
            self._B[self._channel_coord[name], col] = 1.0

    def __repr__(self):
        return f"VLIP(mass={self.mass}, gravity={self.gravity}, channels={self.input_names})"

    def mass_matrix(self, q):
        th, _, L = q
        m = self.mass
        s = np.sin(th)
        return np.diag([m * L * L, m * L * L * s * s, m])

    def mass_matrix_jacobian(self, q):
        th, _, L = q
        m = self.mass
        s, c = np.sin(th), np.cos(th)
        dD = np.zeros((3, 3, 3))
        dD[0, 0, 2] = 2 * m * L
        dD[1, 1, 0] = 2 * m * L * L * s * c
        dD[1, 1, 2] = 2 * m * L * s * s
        return dD

    def potential(self, q):
        return self.mass * self.gravity * q[2] * np.cos(q[0])

    def gravity_vector(self, q):
        th, _, L = q
        mg = self.mass * self.gravity
        return np.array([-mg * L * np.sin(th), 0.0, mg * np.cos(th)])

    def control_matrix(self, q):
        return self._B.copy()

    def com_position(self, q, contact=(0.0, 0.0, 0.0)):
        th, ph, L = q
        st = np.sin(th)
        return np.asarray(contact) + L * np.array([st * np.cos(ph), st * np.sin(ph), np.cos(th)])

    def com_acceleration(self, q, qdot, qddot):
        """Second time derivative of the point-mass position by the chain rule."""
        th, ph, L = q
        thd, phd, Ld = qdot
        thdd, phdd, Ldd = qddot
        st, ct = np.sin(th), np.cos(th)
        sp, cp = np.sin(ph), np.cos(ph)
        u = np.array([st * cp, st * sp, ct])
        u_th = np.array([ct * cp, ct * sp, -st])
        u_ph = np.array([-st * sp, st * cp, 0.0])
        u_thth = -u
        u_thph = np.array([-ct * sp, ct * cp, 0.0])
        u_phph = np.array([-st * cp, -st * sp, 0.0])
        udot = u_th * thd + u_ph * phd
        uddot = (u_thth * thd * thd + 2.0 * u_thph * thd * phd + u_phph * phd * phd
                 + u_th * thdd + u_ph * phdd)
        return Ldd * u + 2.0 * Ld * udot + L * uddot

    def ground_reaction(self, q, qdot, qddot):
        acc = self.com_acceleration(q, qdot, qddot)
        F = self.mass * (acc + np.array([0.0, 0.0, self.gravity]))
        return GroundReaction(float(F[0]), float(F[1]), float(F[2]))

    def check_state(self, q, qdot):
        q = _as_vector(q, 3, "q")
        _as_vector(qdot, 3, "qdot")
        th, _, L = q
        if not L > 0:
            raise InvalidStateError(f"leg length must be positive, got {L}")
        if not (self.min_theta <= th < np.pi / 2):
            raise InvalidStateError(
                f"pendulum angle {th} outside [{self.min_theta}, pi/2) (azimuth singularity at 0)")


class TwoLinkChain(Model):
    """Planar two-link chain with point masses at the link midpoints.

    The shoulder is passive and the elbow carries the only joint actuator, so
    the model has one degree of underactuation with ``q1`` unactuated.  With
    ``thruster_at_tip`` two extra input channels apply a planar force at the
    distal tip; their columns in ``B`` are the transposed tip Jacobian.
    Positions live in the x-z plane with z up.
    """

    coord_names = ("q1", "q2")
    unactuated_index = 0

    def __init__(self, masses=(1.0, 1.0), lengths=(0.5, 0.5), gravity=9.81, thruster_at_tip=False):
        m1, m2 = (float(v) for v in masses)
        l1, l2 = (float(v) for v in lengths)
        if min(m1, m2, l1, l2) <= 0 or not gravity > 0:
            raise ValueError("masses, lengths and gravity must be positive")
        self.masses = (m1, m2)
        self.lengths = (l1, l2)
        self.gravity = float(gravity)
        self.thruster_at_tip = bool(thruster_at_tip)
        self.input_names = ("tau2", "thrust_x", "thrust_z") if thruster_at_tip else ("tau2",)

    @property
    def mass(self):
        return sum(self.masses)

    def __repr__(self):
        return (f"TwoLinkChain(masses={self.masses}, lengths={self.lengths}, "
                f"gravity={self.gravity}, thruster_at_tip={self.thruster_at_tip})")

    def _consts(self):
        m1, m2 = self.masses
        l1, l2 = self.lengths
        return m1, m2, l1, 0.5 * l1, 0.5 * l2

    def mass_matrix(self, q):
        m1, m2, l1, lc1, lc2 = self._consts()
        c2 = np.cos(q[1])
        d11 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * c2)
        d12 = m2 * (lc2**2 + l1 * lc2 * c2)
        d22 = m2 * lc2**2
        return np.array([[d11, d12], [d12, d22]])

    def mass_matrix_jacobian(self, q):
        _, m2, l1, _, lc2 = self._consts()
        s2 = np.sin(q[1])
        dD = np.zeros((2, 2, 2))
        dD[0, 0, 1] = -2 * m2 * l1 * lc2 * s2
        dD[0, 1, 1] = dD[1, 0, 1] = -m2 * l1 * lc2 * s2
        return dD

    def potential(self, q):
        m1, m2, l1, lc1, lc2 = self._consts()
        q1, q2 = q
        z1 = -lc1 * np.cos(q1)
        z2 = -l1 * np.cos(q1) - lc2 * np.cos(q1 + q2)
        return self.gravity * (m1 * z1 + m2 * z2)

    def gravity_vector(self, q):
        m1, m2, l1, lc1, lc2 = self._consts()
        q1, q2 = q
        g = self.gravity
        s12 = np.sin(q1 + q2)
        return np.array([
            g * (m1 * lc1 * np.sin(q1) + m2 * (l1 * np.sin(q1) + lc2 * s12)),
            g * m2 * lc2 * s12,
        ])

    def tip_position(self, q):
        l1, l2 = self.lengths
        q1, q2 = q
        return np.array([l1 * np.sin(q1) + l2 * np.sin(q1 + q2),
                         -l1 * np.cos(q1) - l2 * np.cos(q1 + q2)])

    def tip_jacobian(self, q):
        l1, l2 = self.lengths
        q1, q2 = q
        c1, c12 = np.cos(q1), np.cos(q1 + q2)
        s1, s12 = np.sin(q1), np.sin(q1 + q2)
        return np.array([[l1 * c1 + l2 * c12, l2 * c12],
                         [l1 * s1 + l2 * s12, l2 * s12]])

    def control_matrix(self, q):
        B = np.array([[0.0], [1.0]])
        if self.thruster_at_tip:
            B = np.hstack([B, self.tip_jacobian(q).T])
        return B

    def _points(self, q, qdot, qddot):
        m1, m2, l1, lc1, lc2 = self._consts()
        q1, q2 = q
        a = q1 + q2
        d1, d2 = qdot
        dd1, dd2 = qddot
        da, dda = d1 + d2, dd1 + dd2
        # acceleration of a point r*[sin(x), -cos(x)]
        def acc(r, x, xd, xdd):
            return r * np.array([np.cos(x) * xdd - np.sin(x) * xd * xd,
                                 np.sin(x) * xdd + np.cos(x) * xd * xd])
        a1 = acc(lc1, q1, d1, dd1)
        a2 = acc(l1, q1, d1, dd1) + acc(lc2, a, da, dda)
        return ((m1, a1), (m2, a2))

    def ground_reaction(self, q, qdot, qddot):
        """Force the pivot exerts on the chain (x, z), reported as ``Fx, Fz`` with ``Fy = 0``."""
        F = np.zeros(2)
        for mi, ai in self._points(q, qdot, qddot):
            F += mi * (ai + np.array([0.0, self.gravity]))
        return GroundReaction(float(F[0]), 0.0, float(F[1]))


# ---------------------------------------------------------------------------
# generic operations


def mass_matrix(model, q):
    q = _as_vector(q, model.n, "q")
    return model.mass_matrix(q)


def gravity_vector(model, q):
    q = _as_vector(q, model.n, "q")
    return model.gravity_vector(q)


def christoffel(model, q):
    """Christoffel symbols of the first kind as an ``(n, n, n)`` array.

    ``Q[i]`` is the symmetric matrix with
    ``Q[i][j, k] = 1/2 (dD_ij/dq_k + dD_ik/dq_j - dD_jk/dq_i)`` so that the
    Coriolis/centrifugal force on coordinate ``i`` is ``qd @ Q[i] @ qd``.
    """
    q = _as_vector(q, model.n, "q")
    dD = model.mass_matrix_jacobian(q)
    # dD[i, j, k] = dD_ij/dq_k
    return 0.5 * (dD + dD.transpose(0, 2, 1) - dD.transpose(2, 0, 1))


def coriolis_matrix(model, q, qdot):
    """Matrix ``C`` with ``C[i, j] = sum_k Q[i][j, k] qd_k``."""
    qdot = _as_vector(qdot, model.n, "qdot")
    return christoffel(model, q) @ qdot


def bias_vector(model, q, qdot):
    q = _as_vector(q, model.n, "q")
    qdot = _as_vector(qdot, model.n, "qdot")
    Q = christoffel(model, q)
    return np.einsum("ijk,j,k->i", Q, qdot, qdot) + model.gravity_vector(q)


def control_matrix(model, q):
    q = _as_vector(q, model.n, "q")
    return model.control_matrix(q)


def dynamics_terms(model, q, qdot):
    q = _as_vector(q, model.n, "q")
    qdot = _as_vector(qdot, model.n, "qdot")
    return DynamicsTerms(
        D=model.mass_matrix(q),
        H=bias_vector(model, q, qdot),
        G=model.gravity_vector(q),
        B=model.control_matrix(q),
    )


def _solve_spd(D, rhs, coord_names):
    try:
        L = np.linalg.cholesky(D)
    except np.linalg.LinAlgError:
        L = None
    if L is not None:
        diag = np.diag(L)
        if diag.min() > 1e-9 * max(diag.max(), 1.0):
            y = np.linalg.solve(L, rhs)
            return np.linalg.solve(L.T, y)
    w, V = np.linalg.eigh(D)
    bad = int(np.argmax(np.abs(V[:, 0])))
    name = coord_names[bad] if coord_names else str(bad)
    raise SingularConfigurationError(
        f"inertia matrix singular (min eigenvalue {w[0]:.3e}) along coordinate '{name}'", coordinate=name)


def forward_dynamics(model, state, u):
    """Return ``(qddot, xdot)`` with ``qddot = D^-1 (-H + B u)`` and ``xdot = [qdot, qddot]``."""
    q = _as_vector(state.q, model.n, "q")
    qdot = _as_vector(state.qdot, model.n, "qdot")
    u = _as_vector(u, model.m, "u")
    D = model.mass_matrix(q)
    rhs = -bias_vector(model, q, qdot) + model.control_matrix(q) @ u
    qddot = _solve_spd(D, rhs, model.coord_names)
    return qddot, np.concatenate([qdot, qddot])


def ground_reaction(model, state, qddot):
    """Contact force from the Newton balance of the model's masses."""
    return model.ground_reaction(np.asarray(state.q, float), np.asarray(state.qdot, float),
                                 np.asarray(qddot, float))


def total_energy(model, q, qdot):
    q = np.asarray(q, float)
    qdot = np.asarray(qdot, float)
    return 0.5 * qdot @ model.mass_matrix(q) @ qdot + model.potential(q)
