"""Virtual constraints ``y = H q - r(.)`` with Bezier references.

A :class:`ReferencePath` is parameterized either by time (``mode="time"``,
phase ``s = (t mod T) / T``) or by the unactuated coordinate
(``mode="state"``, ``s = (q_n - q_n_min) / (q_n_max - q_n_min)``).  All
derivatives returned by :func:`eval_reference` are with respect to the native
parameter (``t`` or ``q_n``), not the phase.

The primed reference is ``r + I`` where ``I`` is the running integral of the
primer.  Outputs measure the distance to it::

    y    = H q  - r(x) - I
    ydot = H qd - r'(x) xdot        (the Lie derivative L_f h)

so that ``d/dt y = ydot - omega``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from . import models
from .errors import ConfigError, TransversalityError, UnsupportedModeError

__all__ = [
    "ReferencePath",
    "OutputEval",
    "bezier",
    "eval_reference",
    "output_and_derivative",
    "curve_state",
    "transversality",
    "restriction_dynamics",
]

TOL_TRANSVERSALITY = 1e-6


def _decasteljau(ctrl, s):
    """Evaluate Bezier curves (one per row of ``ctrl``) at ``s``."""
    b = np.array(ctrl, dtype=float, copy=True)
    for k in range(b.shape[1] - 1, 0, -1):
        b = (1.0 - s) * b[:, :k] + s * b[:, 1:k + 1]
    return b[:, 0]


def _bernstein(binom, s):
    k = np.arange(binom.size)
    return binom * s**k * (1.0 - s) ** k[::-1]


def bezier(coeffs, s):
    """Value, first and second derivative in ``s`` of row-wise Bezier curves (de Casteljau)."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=float))
    deg = c.shape[1] - 1
    val = _decasteljau(c, s)
    if deg == 0:
        zero = np.zeros(c.shape[0])
        return val, zero, zero.copy()
    d1 = deg * np.diff(c, axis=1)
    dval = _decasteljau(d1, s)
    if deg == 1:
        return val, dval, np.zeros(c.shape[0])
    d2 = (deg - 1) * np.diff(d1, axis=1)
    return val, dval, _decasteljau(d2, s)


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Bezier description of the reference ``r(.)`` and its output selector.

    coeffs : (rows, degree + 1) array
    mode : ``"time"`` or ``"state"``
    selector : (rows, n) matrix ``H`` picking the actuated coordinates
    period : gait period ``T`` [s] for time-based paths
    qn_range : ``(q_n_min, q_n_max)`` for state-based paths
    periodic : time-based phase wraps modulo ``T`` and the curve must be closed
    """

    coeffs: np.ndarray
    mode: str
    selector: np.ndarray
    period: float | None = None
    qn_range: tuple | None = None
    periodic: bool = False

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        H = np.atleast_2d(np.asarray(self.selector, dtype=float))
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "selector", H)
        if c.shape[1] < 2:
            raise ConfigError("Bezier degree must be at least 1", key="references.coeffs")
        if not np.all(np.isfinite(c)):
            raise ConfigError("Bezier coefficients must be finite", key="references.coeffs")
        if H.shape[0] != c.shape[0]:
            raise ConfigError(f"selector has {H.shape[0]} rows but coeffs has {c.shape[0]}",
                              key="references.selector")
        if np.linalg.matrix_rank(H) != H.shape[0]:
            raise ConfigError("selector must have full row rank", key="references.selector")
        if self.mode == "time":
            if self.period is None or not self.period > 0:
                raise ConfigError("time-based path needs a positive period", key="references.period")
            if self.periodic and self.closure_residual() > 1e-9:
                raise ConfigError(
                    f"periodic path is not closed: |r(0) - r(1)| = {self.closure_residual():.3e}",
                    key="references.coeffs")
        elif self.mode == "state":
            lo, hi = self.qn_range if self.qn_range is not None else (0.0, 0.0)
            if not hi > lo:
                raise ConfigError("state-based path needs qn_max > qn_min", key="references.qn_range")
            object.__setattr__(self, "qn_range", (float(lo), float(hi)))
            if not np.all(np.isin(H, (0.0, 1.0))) or not np.all(H.sum(axis=1) == 1.0):
                raise ConfigError("state-based selector rows must be unit coordinate vectors",
                                  key="references.selector")
        else:
            raise ConfigError(f"unknown reference mode {self.mode!r}", key="references.mode")
        deg = c.shape[1] - 1
        d1 = deg * np.diff(c, axis=1)
        d2 = (deg - 1) * np.diff(d1, axis=1) if deg > 1 else np.zeros((c.shape[0], 1))
        object.__setattr__(self, "_ctrl", tuple(
            (a, comb(a.shape[1] - 1, np.arange(a.shape[1]))) for a in (c, d1, d2)))

    @property
    def rows(self):
        return self.coeffs.shape[0]

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    @property
    def scale(self):
        """``ds/dx`` for the native parameter ``x``."""
        if self.mode == "time":
            return 1.0 / self.period
        lo, hi = self.qn_range
        return 1.0 / (hi - lo)

    def phase(self, x):
        """Phase ``s`` in [0, 1] for the native parameter ``x``."""
        if self.mode == "time":
            if self.periodic:
                return (x % self.period) / self.period
            return min(max(x / self.period, 0.0), 1.0)
        lo, hi = self.qn_range
        return min(max((x - lo) / (hi - lo), 0.0), 1.0)

    def evaluate(self, x):
        """``(r, dr/dx, d2r/dx2)`` at native parameter ``x``."""
        return eval_reference(self, self.phase(x))

    def closure_residual(self):
        return float(np.max(np.abs(self.coeffs[:, 0] - self.coeffs[:, -1])))

    def actuated_coords(self):
        """Coordinate index selected by each row (state-based / unit selectors only)."""
        return np.argmax(self.selector, axis=1)

    def native_parameter(self, model, q, qdot, t):
        """Native parameter ``x`` and its rate ``xdot`` for a state."""
        if self.mode == "time":
            return t, 1.0
        i = model.unactuated_index
        return q[i], qdot[i]


def eval_reference(path, s):
    """Reference value and derivatives w.r.t. the native parameter at phase ``s``."""
    s = min(max(float(s), 0.0), 1.0)
    r, dr, ddr = (a @ _bernstein(b, s) for a, b in path._ctrl)
    k = path.scale
    return r, dr * k, ddr * k * k


@dataclass(frozen=True, eq=False)
class OutputEval:
    y: np.ndarray
    ydot: np.ndarray


def output_and_derivative(model, path, state, omega_integral=None, t=0.0):
    """Primed output ``y`` and its Lie derivative ``ydot`` at ``state``."""
    q, qd = state.q, state.qdot
    x, xdot = path.native_parameter(model, q, qd, t)
    r, dr, _ = path.evaluate(x)
    y = path.selector @ q - r
    if omega_integral is not None:
        y = y - np.asarray(omega_integral, dtype=float)
    ydot = path.selector @ qd - dr * xdot
    return OutputEval(y, ydot)


def _require_state_mode(model, path):
    if path.mode != "state":
        raise UnsupportedModeError("operation needs a state-based path")
    if model.unactuated_index is None:
        raise UnsupportedModeError("operation needs a model with one degree of underactuation")


def curve_state(model, path, q_n, qdot_n=0.0):
    """Point on the zero dynamics manifold ``y = ydot = 0`` at ``(q_n, qdot_n)``."""
    _require_state_mode(model, path)
    r, dr, _ = path.evaluate(q_n)
    q = np.zeros(model.n)
    qd = np.zeros(model.n)
    idx = path.actuated_coords()
    q[idx] = r
    qd[idx] = dr * qdot_n
    q[model.unactuated_index] = q_n
    qd[model.unactuated_index] = qdot_n
    return models.GeneralizedState(q, qd)


def _tangents(model, path, q_n):
    r, dr, ddr = path.evaluate(q_n)
    idx = path.actuated_coords()
    n = model.n
    q = np.zeros(n)
    xi = np.zeros(n)
    dxi = np.zeros(n)
    q[idx], xi[idx], dxi[idx] = r, dr, ddr
    q[model.unactuated_index] = q_n
    xi[model.unactuated_index] = 1.0
    return q, xi, dxi


def _annihilator(model, q):
    B = model.control_matrix(q)
    i = model.unactuated_index
    if np.any(np.abs(B[i]) > 0):
        raise UnsupportedModeError(f"coordinate {model.coord_names[i]!r} is actuated by B")
    row = np.zeros(model.n)
    row[i] = 1.0
    return row


def transversality(model, path, q_n):
    """Scalar ``B_perp D(q) [r'; 1]`` evaluated on the reference curve at ``q_n``."""
    _require_state_mode(model, path)
    q, xi, _ = _tangents(model, path, q_n)
    return float(_annihilator(model, q) @ model.mass_matrix(q) @ xi)


def restriction_dynamics(model, path, q_n, qdot_n, tol=TOL_TRANSVERSALITY):
    """Acceleration of ``q_n`` on the zero dynamics manifold.

    ``qdd_n = -(beta1 qd_n^2 + beta2) / alpha`` with ``alpha`` the transversality
    scalar, ``beta1 = B_perp (D [r''; 0] + sum_i e_i [r'; 1]^T Q_i [r'; 1])`` and
    ``beta2 = B_perp G``.
    """
    _require_state_mode(model, path)
    q, xi, dxi = _tangents(model, path, q_n)
    bp = _annihilator(model, q)
    D = model.mass_matrix(q)
    alpha = bp @ D @ xi
    if abs(alpha) < tol:
        raise TransversalityError(f"transversality vanishes at q_n={q_n} (alpha={alpha:.3e})",
                                  location=q_n)
    Q = models.christoffel(model, q)
    beta1 = bp @ (D @ dxi + np.einsum("ijk,j,k->i", Q, xi, xi))
    beta2 = bp @ model.gravity_vector(q)
    return float(-(beta1 * qdot_n**2 + beta2) / alpha)
