"""Run the shipped gait scenario with and without the primer and tabulate the constraints.

    python scripts/run_fig2.py [--output DIR] [--t-end SECONDS]
"""
import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from primer_gait import cli, config, sim


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--output", type=Path, default=None, help="directory for the two trace CSVs")
    p.add_argument("--t-end", type=float, default=None)
    args = p.parse_args()

    scenario = config.load_config(config.scenario_path("fig2_scenario")).scenario
    if args.t_end is not None:
        scenario = replace(scenario, t_end=args.t_end)
    start = time.perf_counter()
    primed, unprimed, report = sim.compare_runs(scenario)
    elapsed = time.perf_counter() - start

    print(f"{'':12s}{'min theta [deg]':>16s}{'min Fz [N]':>12s}{'violations':>12s}")
    for label, res in (("unprimed", unprimed), ("primed", primed)):
        tr = res.trace
        print(f"{label:12s}{np.rad2deg(tr.q[:, 0].min()):16.3f}{tr.grf[:, 2].min():12.2f}"
              f"{res.summary['violation_samples']:12d}")
    print()
    print(f"{'constraint':14s}{'unprimed':>10s}{'primed':>10s}")
    for name in unprimed.summary["constraints"]:
        print(f"{name:14s}{unprimed.summary['constraints'][name]['count']:10d}"
              f"{primed.summary['constraints'][name]['count']:10d}")
    print(f"\nboth runs in {elapsed:.2f} s")

    if args.output is not None:
        args.output.mkdir(parents=True, exist_ok=True)
        cli.write_trace(primed.trace, args.output / "trace_primed.csv")
        cli.write_trace(unprimed.trace, args.output / "trace_unprimed.csv")


if __name__ == "__main__":
    main()
