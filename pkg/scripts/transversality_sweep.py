"""Sample the transversality scalar of a state-based scenario over its q_n range.

    python scripts/transversality_sweep.py [SCENARIO.toml] [--points N] [--csv FILE]

Defaults to the shipped vanishing-transversality fixture.
"""
import argparse

import numpy as np

from primer_gait import cli, config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("scenario", nargs="?", default=str(config.scenario_path("two_link_vanishing")))
    p.add_argument("--points", type=int, default=cli.SWEEP_POINTS)
    p.add_argument("--csv", default=None, help="write q_n, alpha columns here")
    args = p.parse_args()

    sc = config.load_config(args.scenario).scenario
    sweep = cli.transversality_sweep(sc.model, sc.path, args.points)
    print(f"min |alpha| = {sweep['min_abs']:.6e} at q_n = {sweep['argmin']:.6f}")
    for r in sweep["roots"]:
        print(f"root at q_n = {r:.12f}")
    if args.csv:
        np.savetxt(args.csv, np.column_stack([sweep["grid"], sweep["alpha"]]), delimiter=",",
                   header="q_n,alpha", comments="", fmt="%.17g")


if __name__ == "__main__":
    main()
