"""Command-line front end for seeded trials and sweeps with CSV output."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import desk_profile, load_scenario, paper_profile
from .harness import SCHEMES, SWEEP_AXES, run_sweep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="risjam",
        description="Active-RIS anti-jamming simulation: seeded Monte-Carlo trials and sweeps.",
    )
    p.add_argument("--scenario", help="flat key=value scenario file overriding profile defaults")
    p.add_argument("--scheme", default="all", help=f"one of {', '.join(SCHEMES)} or 'all'")
    p.add_argument("--sweep", help=f"sweep axis: one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--trials", type=int, help="override trial count")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--profile", choices=("paper", "desk"), default="paper")
    p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.scenario:
        cfg = load_scenario(args.scenario, profile=args.profile)
    else:
        cfg = desk_profile() if args.profile == "desk" else paper_profile()
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    schemes = SCHEMES if args.scheme == "all" else (args.scheme,)
    if args.sweep:
        if args.sweep == "iterations":
            values = []
        elif not args.values:
            print("--values is required for this sweep axis", file=sys.stderr)
            return 2
        else:
            values = [float(v) for v in args.values.split(",")]
        result = run_sweep(cfg, args.sweep, values, schemes=schemes, jobs=args.jobs, out=args.out)
    else:
        # single point: reuse the sweep machinery on the B axis at its configured value
        result = run_sweep(cfg, "B", [cfg.b], schemes=schemes, jobs=args.jobs, out=args.out)
    for row in result.rows():
        axis, value, scheme, mean_rate, stderr, trials, seed, objective = row
        print(f"{axis}={value:g} {scheme}: rate={mean_rate:.4f} bits (+/- {stderr:.4f}), "
              f"objective={objective:.4f}, trials={trials}, seed={seed}")
    if args.out:
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
