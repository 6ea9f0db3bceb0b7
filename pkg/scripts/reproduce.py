#!/usr/bin/env python3
"""Run the full pipeline for one config: solve, simulate, best response, refine.

    python scripts/reproduce.py configs/paper-crypto.cfg
    python scripts/reproduce.py configs/small.cfg --skip-refine
"""
import argparse
import sys
import time
from pathlib import Path

from minemfg.cli import main as cli


def run(step, args):
    t0 = time.perf_counter()
    code = cli([step] + args)
    print(f"{step:14s} exit {code}  {time.perf_counter() - t0:7.1f} s", flush=True)
    return code


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--skip-refine", action="store_true")
    args = p.parse_args()

    common = ["--config", str(args.config)]
    if args.out is not None:
        common += ["--out", str(args.out)]
    steps = ["solve", "simulate", "best-response"] + ([] if args.skip_refine else ["refine"])
    for step in steps:
        code = run(step, common)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
