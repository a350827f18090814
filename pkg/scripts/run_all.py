"""Run ``verify`` on every bundled scenario, one output directory each."""

import argparse
import sys
import time
from pathlib import Path

from volterra_dp import scenario
from volterra_dp.cli import main as cli_main


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="results")
    p.add_argument("--only", nargs="*", default=None, help="subset of scenario names")
    args = p.parse_args()

    names = args.only or list(scenario.BUNDLED)
    codes = {}
    for name in names:
        t0 = time.perf_counter()
        codes[name] = cli_main(["verify", "--config", name, "--out", str(Path(args.out) / name)])
        print(f"-- {name}: exit {codes[name]} in {time.perf_counter() - t0:.1f}s\n")
    for name, code in codes.items():
        print(f"{name:<12} {'ok' if code == 0 else 'FAILED'}")
    return max(codes.values())


if __name__ == "__main__":
    sys.exit(main())
