"""Command-line entry point: ``simulate``, ``compare`` and ``check``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (including a
failed ``check``), 3 I/O failure.  ``PRIMER_GAIT_LOG`` sets the log level
(default INFO, which echoes every configuration default applied).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import config as cfg
from . import sim, vc
from .errors import ConfigError, PrimerGaitError, TransversalityError

log = logging.getLogger("primer_gait")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
SWEEP_POINTS = 512
CLOSURE_TOL = 1e-9
PERIODICITY_TOL = 1e-3

__all__ = ["main", "write_trace", "write_summary", "check_report", "periodicity_residual"]


def write_trace(trace, path):
    """Write a trace as CSV with full-precision decimals."""
    names, data = trace.columns()
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def read_trace(path):
    """Column names and data of a CSV written by :func:`write_trace`."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def summary_rows(summary):
    rows = [("steps", summary["steps"])]
    for name, (lo, hi) in summary["channels"].items():
        rows += [(f"min_{name}", lo), (f"max_{name}", hi)]
    for name, c in summary["constraints"].items():
        rows += [(f"violation_count_{name}", c["count"]), (f"violation_duration_{name}", c["duration"]),
                 (f"violation_episodes_{name}", c["episodes"]),
                 (f"longest_episode_{name}", c["longest"])]
    rows += [("violation_samples", summary["violation_samples"]),
             ("violation_duration", summary["violation_duration"]),
             ("longest_episode", summary["longest_episode"])]
    return rows


def write_summary(summary, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        for key, value in summary_rows(summary):
            w.writerow([key, repr(float(value)) if isinstance(value, float) else value])


def compare_report(report, primed, unprimed):
    lines = ["primer comparison", ""]
    for label, res in (("primed", primed), ("unprimed", unprimed)):
        s = res.summary
        lines.append(f"{label}: violation samples {s['violation_samples']}, "
                     f"duration {s['violation_duration']:.3f} s, longest episode {s['longest_episode']:.3f} s")
        for name, c in s["constraints"].items():
            lines.append(f"  {name}: {c['count']} samples, {c['episodes']} episodes, "
                         f"longest {c['longest']:.3f} s")
    u, p = report["unprimed_violations"], report["primed_violations"]
    ratio = "inf" if p == 0 and u > 0 else ("n/a" if p == 0 else f"{u / p:.2f}")
    lines += ["", f"violation ratio unprimed/primed: {ratio}",
              f"traces identical: {'yes' if report['identical'] else 'no'} "
              f"(max difference {report['max_difference']:.3e})"]
    return "\n".join(lines) + "\n"


def transversality_sweep(model, path, points=SWEEP_POINTS):
    """Sampled ``alpha`` over the q_n range, its minimum magnitude and refined sign-change roots."""
    lo, hi = path.qn_range
    grid = np.linspace(lo, hi, points)
    alpha = np.array([vc.transversality(model, path, x) for x in grid])
    i = int(np.argmin(np.abs(alpha)))
    roots = []
    for j in np.flatnonzero(np.sign(alpha[:-1]) * np.sign(alpha[1:]) < 0):
        roots.append(brentq(lambda x: vc.transversality(model, path, x), grid[j], grid[j + 1],
                            xtol=1e-14))
    roots += [float(grid[j]) for j in np.flatnonzero(alpha == 0.0)]
    return {"grid": grid, "alpha": alpha, "min_abs": float(abs(alpha[i])),
            "argmin": float(grid[i]), "roots": sorted(roots)}


def periodicity_residual(header, data, period, coord_names):
    """Max |x(t) - x(t - T)| over the last period of a trace, for q and qd columns."""
    t = data[:, header.index("t")]
    if t.size < 2:
        return None
    shift = int(round(period / (t[1] - t[0])))
    if shift >= t.size:
        return None
    cols = [header.index(f"q_{c}") for c in coord_names] + [header.index(f"qd_{c}") for c in coord_names]
    x = data[:, cols]
    return float(np.max(np.abs(x[-1] - x[-1 - shift])))


def check_report(config, trace_path=None):
    """Diagnostics text and pass flag for ``config`` (and an optional trace CSV)."""
    scenario = config.scenario
    model, path = scenario.model, scenario.path
    lines, ok = ["diagnostics", ""], True
    if path.mode == "state" and model.unactuated_index is not None:
        sw = transversality_sweep(model, path)
        lines.append(f"transversality sweep over q_n in [{path.qn_range[0]:g}, {path.qn_range[1]:g}] "
                     f"({SWEEP_POINTS} points)")
        lines.append(f"  min |alpha| = {sw['min_abs']:.6e} at q_n = {sw['argmin']:.6f}")
        if sw["roots"]:
            ok = False
            for r in sw["roots"]:
                lines.append(f"  FAIL: alpha vanishes at q_n = {r:.10f}")
        elif sw["min_abs"] < vc.TOL_TRANSVERSALITY:
            ok = False
            lines.append(f"  FAIL: min |alpha| below {vc.TOL_TRANSVERSALITY:g}")
        else:
            lines.append("  transversality: pass")
    else:
        lines.append("transversality sweep: skipped (needs a state-based path)")
    closure = path.closure_residual()
    lines.append(f"reference closure residual |r(0) - r(1)| = {closure:.3e}"
                 + ("" if path.periodic else " (path not periodic)"))
    if path.periodic and closure > CLOSURE_TOL:
        ok = False
        lines.append("  FAIL: periodic reference is not closed")
    if trace_path is not None:
        header, data = read_trace(trace_path)
        if path.mode == "time":
            res = periodicity_residual(header, data, path.period, model.coord_names)
            if res is None:
                lines.append("periodicity residual: trace shorter than one period")
            else:
                lines.append(f"periodicity residual over the last period = {res:.3e}")
                if res > PERIODICITY_TOL:
                    lines.append(f"  warning: periodicity residual above {PERIODICITY_TOL:g}")
        else:
            lines.append("periodicity residual: skipped (no period for a state-based path)")
    lines += ["", f"check: {'PASS' if ok else 'FAIL'}"]
    return "\n".join(lines) + "\n", ok


def _output_dir(args):
    out = Path(args.output)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def cmd_simulate(args, config):
    out = _output_dir(args)
    if args.primer is not None:
        config = config.with_overrides(primer_enabled=args.primer == "on")
    result = sim.run_scenario(config.scenario)
    write_trace(result.trace, out / "trace.csv")
    write_summary(result.summary, out / "summary.csv")
    s = result.summary
    print(f"{config.label}: {s['steps']} steps, primer {'on' if config.scenario.primer_enabled else 'off'}, "
          f"{s['violation_samples']} violation samples")
    return EXIT_OK


def cmd_compare(args, config):
    out = _output_dir(args)
    primed, unprimed, report = sim.compare_runs(config.scenario)
    write_trace(primed.trace, out / "trace_primed.csv")
    write_trace(unprimed.trace, out / "trace_unprimed.csv")
    text = compare_report(report, primed, unprimed)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args, config):
    text, ok = check_report(config, args.trace)
    sys.stdout.write(text)
    if args.output is not None:
        (_output_dir(args) / "check.txt").write_text(text)
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="primer-gait",
                                description="Primed virtual-constraint gait simulation.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_text in (("simulate", "run one scenario and write trace.csv and summary.csv"),
                            ("compare", "run with and without the primer and write a report"),
                            ("check", "transversality, closure and periodicity diagnostics")):
        s = sub.add_parser(verb, help=help_text)
        s.add_argument("--config", required=True, help="TOML scenario file")
        s.add_argument("--output", default="." if verb != "check" else None,
                       help="existing output directory")
        s.add_argument("--dt", type=float, default=None, help="override the integration step [s]")
        if verb == "simulate":
            s.add_argument("--primer", choices=("on", "off"), default=None,
                           help="override the primer switch of the configuration")
        if verb == "check":
            s.add_argument("--trace", default=None, help="trace CSV for the periodicity residual")
    return p


def _setup_logging():
    level = os.environ.get("PRIMER_GAIT_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    handlers = {"simulate": cmd_simulate, "compare": cmd_compare, "check": cmd_check}
    try:
        config = cfg.load_config(args.config)
        if args.dt is not None:
            config = config.with_overrides(dt=args.dt)
        return handlers[args.verb](args, config)
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line is not None else ""
        print(f"configuration error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PrimerGaitError, TransversalityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
