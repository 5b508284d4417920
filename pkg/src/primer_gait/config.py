"""TOML run configuration: parsing, validation, defaulting and serialization.

Sections and keys (``*`` marks required keys)::

    [model]        type* ("vlip" | "two_link"), gravity,
                   mass, channels                  (vlip)
                   masses, lengths, thruster_at_tip (two_link)
    [references]   mode*, coeffs*, selector, period, periodic, qn_range
    [gains]        kp*, kd*
    [constraints]  mu, theta_min_deg, fz_min, theta_index, default_eps,
                   scales, eps, u_lower, u_upper, u_scale, disable
    [primer]       enabled, kappa_a, kappa_r, omega_dot_max, delta, horizons
    [sim]          t_end, dt, q0, qdot0, omega0, passive, label

Every default that gets applied is logged at INFO level.
"""
from __future__ import annotations

import copy
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import control, governor, models, sim, vc
from .errors import ConfigError

log = logging.getLogger(__name__)

__all__ = ["RunConfig", "parse_config", "load_config", "serialize_config", "build_scenario",
           "scenario_path", "SCENARIOS"]

SCENARIOS = ("fig2_scenario", "all_safe", "two_link_constant", "two_link_vanishing")

_BUILTIN = ("theta_min", "friction_x", "friction_y", "normal_min")

_SCHEMA = {
    "model": {"type", "gravity", "mass", "channels", "masses", "lengths", "thruster_at_tip"},
    "references": {"mode", "coeffs", "selector", "period", "periodic", "qn_range"},
    "gains": {"kp", "kd"},
    "constraints": {"mu", "theta_min_deg", "fz_min", "theta_index", "default_eps", "scales", "eps",
                    "u_lower", "u_upper", "u_scale", "disable"},
    "primer": {"enabled", "kappa_a", "kappa_r", "omega_dot_max", "delta", "horizons"},
    "sim": {"t_end", "dt", "q0", "qdot0", "omega0", "passive", "label"},
}

_DEFAULTS = {
    "model": {"gravity": 9.81},
    "vlip": {"mass": 1.0, "channels": ["leg", "tau_theta", "tau_phi"]},
    "two_link": {"masses": [1.0, 1.0], "lengths": [0.5, 0.5], "thruster_at_tip": False},
    "references": {"periodic": False},
    "constraints": {"mu": 0.6, "theta_min_deg": 5.0, "fz_min": 20.0, "theta_index": 0,
                    "default_eps": 0.1, "scales": {}, "eps": {}, "u_scale": 1.0, "disable": []},
    "primer": {"enabled": True, "kappa_a": 5.0, "kappa_r": 2.0, "omega_dot_max": 5.0,
               "delta": 1e-4, "horizons": [0.05, 0.1, 0.2]},
    "sim": {"t_end": 2.0, "dt": 1e-3, "passive": False, "label": "run"},
}


@dataclass(eq=False)
class RunConfig:
    """Validated, fully defaulted configuration and the scenario built from it.

    ``data`` is the canonical nested-dict form; equality and serialization use it.
    """

    data: dict
    scenario: sim.Scenario = field(repr=False)

    @property
    def label(self):
        return self.data["sim"]["label"]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    def with_overrides(self, primer_enabled=None, dt=None):
        """Copy with the primer switch and/or time step replaced (CLI flags)."""
        data = copy.deepcopy(self.data)
        if primer_enabled is not None:
            data["primer"]["enabled"] = bool(primer_enabled)
        if dt is not None:
            data["sim"]["dt"] = float(dt)
        _validate_sim(data["sim"])
        return RunConfig(data, build_scenario(data))


def _err(key, message):
    return ConfigError(f"{key}: {message}", key=key)


def _number(sec, name, key, positive=False, nonneg=False):
    value = sec[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise _err(key, f"expected a finite number, got {value!r}")
    if positive and not value > 0:
        raise _err(key, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise _err(key, f"must be non-negative, got {value!r}")
    sec[name] = float(value)
    return sec[name]


def _array(value, key, ndim=None):
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise _err(key, "expected a number or a (nested) list of numbers") from None
    if ndim is not None and a.ndim not in ndim:
        raise _err(key, f"expected {' or '.join(f'{d}-D' for d in ndim)} array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise _err(key, "entries must be finite")
    return a


def _tolist(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a.tolist()


def _apply_defaults(sec, defaults, prefix):
    for name, value in defaults.items():
        if name not in sec:
            sec[name] = copy.deepcopy(value)
            log.info("default applied: %s.%s = %r", prefix, name, value)


def _check_keys(data):
    for name, sec in data.items():
        if name not in _SCHEMA:
            raise _err(name, "unknown section")
        if not isinstance(sec, dict):
            raise _err(name, "expected a table")
        for key in sec:
            if key not in _SCHEMA[name]:
                raise _err(f"{name}.{key}", "unknown key")
    for name in ("model", "references", "gains"):
        if name not in data:
            raise _err(name, "missing required section")
    for name in ("constraints", "primer", "sim"):
        if name not in data:
            data[name] = {}
            log.info("default applied: empty [%s] section", name)


def _validate_model(sec):
    kind = sec.get("type")
    if kind not in ("vlip", "two_link"):
        raise _err("model.type", f"expected 'vlip' or 'two_link', got {kind!r}")
    _apply_defaults(sec, _DEFAULTS["model"], "model")
    _number(sec, "gravity", "model.gravity", positive=True)
    other = {"two_link": ("mass", "channels"), "vlip": ("masses", "lengths", "thruster_at_tip")}[kind]
    for name in other:
        if name in sec:
            raise _err(f"model.{name}", f"not a parameter of model type {kind!r}")
    _apply_defaults(sec, _DEFAULTS[kind], "model")
    if kind == "vlip":
        _number(sec, "mass", "model.mass", positive=True)
        channels = sec["channels"]
        if (not isinstance(channels, list) or sorted(channels) != sorted(_DEFAULTS["vlip"]["channels"])):
            raise _err("model.channels", "must be a permutation of ['leg', 'tau_theta', 'tau_phi']")
        return models.VLIP(sec["mass"], sec["gravity"], tuple(channels))
    for name in ("masses", "lengths"):
        a = _array(sec[name], f"model.{name}", ndim=(1,))
        if a.shape != (2,) or np.any(a <= 0):
            raise _err(f"model.{name}", "expected two positive numbers")
        sec[name] = _tolist(a)
    if not isinstance(sec["thruster_at_tip"], bool):
        raise _err("model.thruster_at_tip", "expected true or false")
    return models.TwoLinkChain(sec["masses"], sec["lengths"], sec["gravity"], sec["thruster_at_tip"])


def _validate_references(sec, model):
    mode = sec.get("mode")
    if mode not in ("time", "state"):
        raise _err("references.mode", f"expected 'time' or 'state', got {mode!r}")
    if "coeffs" not in sec:
        raise _err("references.coeffs", "missing required key")
    coeffs = _array(sec["coeffs"], "references.coeffs", ndim=(2,))
    sec["coeffs"] = _tolist(coeffs)
    _apply_defaults(sec, _DEFAULTS["references"], "references")
    if not isinstance(sec["periodic"], bool):
        raise _err("references.periodic", "expected true or false")
    if "selector" not in sec:
        if mode == "time" and coeffs.shape[0] == model.n:
            sel = np.eye(model.n)
        elif model.unactuated_index is not None and coeffs.shape[0] == model.n - 1:
            sel = np.delete(np.eye(model.n), model.unactuated_index, axis=0)
        else:
            raise _err("references.selector", "cannot infer a selector; give it explicitly")
        sec["selector"] = _tolist(sel)
        log.info("default applied: references.selector = %r", sec["selector"])
    selector = _array(sec["selector"], "references.selector", ndim=(2,))
    if selector.shape[1] != model.n:
        raise _err("references.selector", f"needs {model.n} columns, got {selector.shape[1]}")
    sec["selector"] = _tolist(selector)
    period, qn_range = None, None
    if mode == "time":
        if "qn_range" in sec:
            raise _err("references.qn_range", "only valid for state-based paths")
        if "period" not in sec:
            raise _err("references.period", "missing required key for time-based paths")
        period = _number(sec, "period", "references.period", positive=True)
    else:
        if "period" in sec or sec["periodic"]:
            raise _err("references.period", "state-based paths have no period")
        if "qn_range" not in sec:
            raise _err("references.qn_range", "missing required key for state-based paths")
        rng = _array(sec["qn_range"], "references.qn_range", ndim=(1,))
        if rng.shape != (2,):
            raise _err("references.qn_range", "expected [qn_min, qn_max]")
        sec["qn_range"] = qn_range = _tolist(rng)
    return vc.ReferencePath(coeffs, mode, selector, period=period,
                            qn_range=None if qn_range is None else tuple(qn_range),
                            periodic=sec["periodic"])


def _validate_gains(sec, k):
    for name in ("kp", "kd"):
        if name not in sec:
            raise _err(f"gains.{name}", "missing required key")
        a = _array(sec[name], f"gains.{name}", ndim=(0, 1, 2))
        sec[name] = _tolist(a)
    kp, kd = (np.asarray(sec[n], float) for n in ("kp", "kd"))
    kp = np.full(k, float(kp)) if kp.ndim == 0 else kp
    kd = np.full(k, float(kd)) if kd.ndim == 0 else kd
    return control.Gains(kp, kd)


def _validate_constraints(sec, model):
    _apply_defaults(sec, _DEFAULTS["constraints"], "constraints")
    mu = _number(sec, "mu", "constraints.mu")
    if not mu > 0:
        raise _err("constraints.mu", f"friction coefficient must be positive, got {mu!r}")
    _number(sec, "theta_min_deg", "constraints.theta_min_deg")
    _number(sec, "fz_min", "constraints.fz_min")
    _number(sec, "default_eps", "constraints.default_eps", nonneg=True)
    _number(sec, "u_scale", "constraints.u_scale", positive=True)
    idx = sec["theta_index"]
    if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < model.n:
        raise _err("constraints.theta_index", f"expected an integer in [0, {model.n})")
    disable = sec["disable"]
    if not isinstance(disable, list) or any(d not in _BUILTIN for d in disable):
        raise _err("constraints.disable", f"expected a list drawn from {list(_BUILTIN)}")
    if "friction_x" in disable or "friction_y" in disable:
        if not {"friction_x", "friction_y"} <= set(disable):
            raise _err("constraints.disable", "friction_x and friction_y are disabled together")
    for table in ("scales", "eps"):
        t = sec[table]
        if not isinstance(t, dict):
            raise _err(f"constraints.{table}", "expected a table")
        for name in list(t):
            if name not in _BUILTIN:
                raise _err(f"constraints.{table}.{name}", "unknown constraint")
            _number(t, name, f"constraints.{table}.{name}",
                    positive=table == "scales", nonneg=table == "eps")
    bounds = {}
    for name in ("u_lower", "u_upper"):
        if name in sec:
            a = _array(sec[name], f"constraints.{name}", ndim=(1,))
            if a.shape != (model.m,):
                raise _err(f"constraints.{name}", f"expected {model.m} entries")
            sec[name] = _tolist(a)
            bounds[name] = a
    return governor.ConstraintSpec(
        mu=None if "friction_x" in disable else mu,
        theta_min=None if "theta_min" in disable else math.radians(sec["theta_min_deg"]),
        fz_min=None if "normal_min" in disable else sec["fz_min"],
        theta_index=idx, scales=dict(sec["scales"]), eps=dict(sec["eps"]),
        default_eps=sec["default_eps"], u_lower=bounds.get("u_lower"),
        u_upper=bounds.get("u_upper"), u_scale=sec["u_scale"])


def _validate_primer(sec, k):
    _apply_defaults(sec, _DEFAULTS["primer"], "primer")
    if not isinstance(sec["enabled"], bool):
        raise _err("primer.enabled", "expected true or false")
    for name in ("kappa_a", "kappa_r"):
        _number(sec, name, f"primer.{name}", nonneg=True)
    _number(sec, "delta", "primer.delta", positive=True)
    wmax = _array(sec["omega_dot_max"], "primer.omega_dot_max", ndim=(0, 1))
    if np.any(wmax <= 0) or (wmax.ndim == 1 and wmax.shape != (k,)):
        raise _err("primer.omega_dot_max", f"expected a positive number or {k} positive numbers")
    sec["omega_dot_max"] = _tolist(wmax)
    hz = _array(sec["horizons"], "primer.horizons", ndim=(1,))
    if hz.size == 0 or np.any(hz <= 0):
        raise _err("primer.horizons", "expected a non-empty list of positive times")
    sec["horizons"] = _tolist(hz)
    return governor.PrimerParams(
        kappa_a=sec["kappa_a"], kappa_r=sec["kappa_r"],
        omega_dot_max=float(wmax) if wmax.ndim == 0 else tuple(wmax.tolist()),
        delta=sec["delta"], horizons=tuple(sec["horizons"]))


def _validate_sim(sec):
    _apply_defaults(sec, _DEFAULTS["sim"], "sim")
    dt = _number(sec, "dt", "sim.dt", positive=True)
    t_end = _number(sec, "t_end", "sim.t_end", positive=True)
    if t_end < dt:
        raise _err("sim.t_end", f"must be at least dt = {dt}")
    if not isinstance(sec["passive"], bool):
        raise _err("sim.passive", "expected true or false")
    if not isinstance(sec["label"], str) or not re.fullmatch(r"[\w.-]+", sec["label"]):
        raise _err("sim.label", "expected a non-empty name of letters, digits, '_', '.', '-'")


def _validate_vectors(sec, model, k):
    out = {}
    for name, size in (("q0", model.n), ("qdot0", model.n), ("omega0", k)):
        if name in sec:
            a = _array(sec[name], f"sim.{name}", ndim=(1,))
            if a.shape != (size,):
                raise _err(f"sim.{name}", f"expected {size} entries")
            sec[name] = _tolist(a)
            out[name] = a
    return out


def build_scenario(data):
    """Scenario described by an already validated configuration dict."""
    d = copy.deepcopy(data)
    model = _validate_model(d["model"])
    path = _validate_references(d["references"], model)
    gains = _validate_gains(d["gains"], path.rows)
    spec = _validate_constraints(d["constraints"], model)
    params = _validate_primer(d["primer"], path.rows)
    vectors = _validate_vectors(d["sim"], model, path.rows)
    s = d["sim"]
    return sim.Scenario(model, path, gains, spec, params, primer_enabled=d["primer"]["enabled"],
                        t_end=s["t_end"], dt=s["dt"], q0=vectors.get("q0"),
                        qdot0=vectors.get("qdot0"), omega0=vectors.get("omega0"),
                        passive=s["passive"])


def _validate(data):
    """Validate ``data`` in place (defaults filled, numbers normalized) and build the scenario."""
    _check_keys(data)
    try:
        model = _validate_model(data["model"])
        path = _validate_references(data["references"], model)
        gains = _validate_gains(data["gains"], path.rows)
        _validate_constraints(data["constraints"], model)
        _validate_primer(data["primer"], path.rows)
        _validate_sim(data["sim"])
        _validate_vectors(data["sim"], model, path.rows)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if gains.size != path.rows:
        raise _err("gains.kp", f"gain size {gains.size} does not match {path.rows} outputs")
    if data["primer"]["enabled"] and not data["sim"]["passive"]:
        if path.mode != "time" or path.selector.shape[0] != model.n:
            raise _err("primer.enabled",
                       "the primer needs a time-based path with one output per coordinate")
    if "q0" not in data["sim"] and (path.mode != "time" or path.selector.shape[0] != model.n):
        raise _err("sim.q0", "required unless a time-based path fixes every coordinate")
    try:
        scenario = build_scenario(data)
        sim.initial_state(scenario)
    except ConfigError:
        raise
    except ValueError as exc:
        raise _err("sim.q0", str(exc)) from exc
    return scenario


def parse_config(text):
    """Parse and validate TOML configuration text into a :class:`RunConfig`."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else None
        raise ConfigError(f"TOML syntax error: {exc}", line=line) from exc
    scenario = _validate(data)
    return RunConfig(data, scenario)


def load_config(path):
    """Read and parse a configuration file; I/O errors propagate as ``OSError``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"configuration is not valid UTF-8: {exc}") from exc
    return parse_config(text)


def scenario_path(name):
    """Filesystem path of a shipped scenario (``name`` from :data:`SCENARIOS`)."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return Path(__file__).resolve().parent / "scenarios" / f"{name}.toml"


def serialize_config(config):
    """TOML text that parses back to an equal configuration."""
    return tomli_w.dumps(config.data)
