"""Fixed-step RK4 simulation of plant + feedback law + primer.

The integrated state is ``x = [q, qd, omega, I]`` with ``I`` the running
integral of the primer.  The governor runs once per step at the integration
rate and its rate ``omega_dot`` is held over the step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import control, governor, models, vc
from .errors import IntegrationError, SingularConfigurationError

log = logging.getLogger(__name__)

__all__ = ["Scenario", "Trace", "RunResult", "rk4_step", "initial_state", "run_scenario",
           "compare_runs", "violation_episodes"]


def rk4_step(derivative_fn, x, t, dt, k1=None):
    """Classical fourth-order Runge-Kutta step."""
    k1 = derivative_fn(t, x) if k1 is None else k1
    k2 = derivative_fn(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = derivative_fn(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = derivative_fn(t + dt, x + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite derivative in step starting at t={t:.6f}", t=t)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(eq=False)
class Scenario:
    model: models.Model
    path: object
    gains: control.Gains
    constraints: governor.ConstraintSpec = field(default_factory=governor.ConstraintSpec)
    primer: governor.PrimerParams = field(default_factory=governor.PrimerParams)
    primer_enabled: bool = True
    t_end: float = 2.0
    dt: float = 1e-3
    q0: np.ndarray | None = None
    qdot0: np.ndarray | None = None
    omega0: np.ndarray | None = None
    # zero input instead of the feedback law
    passive: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ValueError("t_end must be at least dt")
        if self.gains.size != self.path.rows:
            raise ValueError("gain size does not match the number of outputs")

    @property
    def steps(self):
        return max(1, int(round(self.t_end / self.dt)))


def initial_state(scenario):
    """Initial ``GeneralizedState``; defaults to the reference at ``t = 0``."""
    model, path = scenario.model, scenario.path
    if scenario.q0 is not None:
        q = np.asarray(scenario.q0, float)
        qd = np.zeros(model.n) if scenario.qdot0 is None else np.asarray(scenario.qdot0, float)
    else:
        if path.mode != "time" or path.selector.shape[0] != model.n:
            raise ValueError("q0 is required unless a time-based path fixes every coordinate")
        r, dr, _ = path.evaluate(0.0)
        q = np.linalg.solve(path.selector, r)
        qd = np.linalg.solve(path.selector, dr) if scenario.qdot0 is None else np.asarray(
            scenario.qdot0, float)
    model.check_state(q, qd)
    return models.GeneralizedState(q, qd)


@dataclass(eq=False)
class Trace:
    """Time series of one run; arrays have one row per step."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    u: np.ndarray
    grf: np.ndarray
    margins: np.ndarray
    omega: np.ndarray
    omega_integral: np.ndarray
    omega_dot: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    coord_names: tuple
    input_names: tuple
    margin_names: tuple

    def columns(self):
        """Column names and the stacked 2-D array, in CSV order."""
        k = self.omega.shape[1]
        names = ["t"]
        names += [f"q_{c}" for c in self.coord_names]
        names += [f"qd_{c}" for c in self.coord_names]
        names += [f"u_{c}" for c in self.input_names]
        names += ["Fx", "Fy", "Fz"]
        names += [f"margin_{c}" for c in self.margin_names]
        names += [f"omega_{i}" for i in range(k)]
        names += [f"omega_int_{i}" for i in range(k)]
        names += [f"y_{i}" for i in range(k)]
        names += [f"yd_{i}" for i in range(k)]
        data = np.column_stack([self.t, self.q, self.qdot, self.u, self.grf, self.margins,
                                self.omega, self.omega_integral, self.y, self.ydot])
        return names, data

    def __len__(self):
        return self.t.shape[0]


def violation_episodes(flags, dt):
    """Durations [s] of contiguous runs of ``True`` in ``flags``."""
    flags = np.asarray(flags, dtype=bool)
    if not flags.any():
        return []
    padded = np.concatenate([[False], flags, [False]]).astype(int)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [float((e - s) * dt) for s, e in zip(starts, ends)]


def summarize(trace, dt):
    summary = {"steps": len(trace)}
    names, data = trace.columns()
    summary["channels"] = {n: (float(data[:, i].min()), float(data[:, i].max()))
                           for i, n in enumerate(names)}
    viol = trace.margins < 0
    per = {}
    for j, name in enumerate(trace.margin_names):
        eps = violation_episodes(viol[:, j], dt)
        per[name] = {"count": int(viol[:, j].sum()), "duration": float(viol[:, j].sum() * dt),
                     "episodes": len(eps), "longest": max(eps, default=0.0)}
    summary["constraints"] = per
    any_v = viol.any(axis=1) if viol.size else np.zeros(len(trace), bool)
    episodes = violation_episodes(any_v, dt)
    summary["violation_samples"] = int(any_v.sum())
    summary["violation_duration"] = float(any_v.sum() * dt)
    summary["longest_episode"] = max(episodes, default=0.0)
    return summary


@dataclass(eq=False)
class RunResult:
    trace: Trace
    summary: dict
    scenario: Scenario


def _singular_check(model, q, t):
    if isinstance(model, models.VLIP) and q[0] < model.min_theta:
        raise SingularConfigurationError(
            f"pendulum angle {q[0]:.4f} rad crossed the azimuth singularity at t={t:.4f}",
            coordinate="phi")


def run_scenario(scenario):
    """Simulate ``scenario`` and return its trace and summary."""
    model, path, gains = scenario.model, scenario.path, scenario.gains
    n, k, m = model.n, path.rows, model.m
    spec = scenario.constraints
    state0 = initial_state(scenario)
    omega0 = np.zeros(k) if scenario.omega0 is None else np.asarray(scenario.omega0, float)
    gov = None
    if scenario.primer_enabled and not scenario.passive:
        gov = governor.Governor(model, path, gains, spec, scenario.primer)

    def plant(t, q, qd, I):
        state = models.GeneralizedState(q, qd)
        if scenario.passive:
            u = np.zeros(m)
            qdd, _ = models.forward_dynamics(model, state, u)
        else:
            u, qdd = control.closed_loop(model, path, state, I, gains, t=t)
        return u, qdd

    x = np.concatenate([state0.q, state0.qdot, omega0, np.zeros(k)])
    N, dt = scenario.steps, scenario.dt
    rec = {name: np.empty((N, size)) for name, size in
           (("q", n), ("qdot", n), ("u", m), ("grf", 3), ("margins", len(spec.names())),
            ("omega", k), ("omega_integral", k), ("omega_dot", k), ("y", k), ("ydot", k))}
    ts = np.empty(N)

    for i in range(N):
        t = i * dt
        q, qd, w, I = x[:n], x[n:2 * n], x[2 * n:2 * n + k], x[2 * n + k:]
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={t:.6f}", t=t)
        _singular_check(model, q, t)
        state = models.GeneralizedState(q, qd)
        if gov is not None:
            a, _ = gov.update(t, state, w, I)
        else:
            a = np.zeros(k)
        try:
            u, qdd = plant(t, q, qd, I)
        except SingularConfigurationError as exc:
            raise SingularConfigurationError(f"{exc} (t={t:.4f})", coordinate=exc.coordinate) from exc
        grf = model.ground_reaction(q, qd, qdd)
        out = vc.output_and_derivative(model, path, state, I, t)

        ts[i] = t
        rec["q"][i], rec["qdot"][i], rec["u"][i] = q, qd, u
        rec["grf"][i] = (grf.Fx, grf.Fy, grf.Fz)
        rec["margins"][i] = governor.constraint_margins(spec, state, grf, u)
        rec["omega"][i], rec["omega_integral"][i], rec["omega_dot"][i] = w, I, a
        rec["y"][i], rec["ydot"][i] = out.y, out.ydot

        def f(tt, xx, a=a):
            qq, qqd = xx[:n], xx[n:2 * n]
            ww, II = xx[2 * n:2 * n + k], xx[2 * n + k:]
            _, qqdd = plant(tt, qq, qqd, II)
            return np.concatenate([qqd, qqdd, a, ww])

        k1 = np.concatenate([qd, qdd, a, w])
        x = rk4_step(f, x, t, dt, k1=k1)

    trace = Trace(ts, rec["q"], rec["qdot"], rec["u"], rec["grf"], rec["margins"], rec["omega"],
                  rec["omega_integral"], rec["omega_dot"], rec["y"], rec["ydot"],
                  model.coord_names, model.input_names, tuple(spec.names()))
    return RunResult(trace, summarize(trace, dt), scenario)


def compare_runs(scenario):
    """Run with and without the primer from identical initial conditions."""
    primed = run_scenario(replace(scenario, primer_enabled=True))
    unprimed = run_scenario(replace(scenario, primer_enabled=False))
    report = {
        "primed_violations": primed.summary["violation_samples"],
        "unprimed_violations": unprimed.summary["violation_samples"],
        "primed_duration": primed.summary["violation_duration"],
        "unprimed_duration": unprimed.summary["violation_duration"],
        "primed_longest_episode": primed.summary["longest_episode"],
        "identical": bool(np.array_equal(primed.trace.columns()[1], unprimed.trace.columns()[1])),
        "max_difference": float(np.max(np.abs(primed.trace.columns()[1] - unprimed.trace.columns()[1]))),
    }
    return primed, unprimed, report
