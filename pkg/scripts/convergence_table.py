"""Truncation convergence study: observed errors and bounds for every order of a scenario.

    python3 scripts/convergence_table.py --config exp_kernel --out results/exp
"""

import argparse
import csv
from pathlib import Path

from volterra_dp import scenario
from volterra_dp.bounds import convergence_table, validate_bounds


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="exp_kernel")
    p.add_argument("--out", default="results/convergence")
    p.add_argument("--phi", choices=["series", "remainder"], default="series")
    p.add_argument("--no-restart", action="store_true", help="skip the restart bounds")
    args = p.parse_args()

    scen = scenario.load(args.config)
    reps = validate_bounds(scen, scen.orders, restart=not args.no_restart, phi_variant=args.phi)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(reps[0].row()))
        w.writeheader()
        for r in reps:
            w.writerow(r.row())
    for kind in ("state", "cost", "restart", "restart_cost"):
        if any(r.kind == kind for r in reps):
            print(convergence_table(reps, kind))
            print()
    print(f"wrote {out / 'convergence.csv'}")


if __name__ == "__main__":
    main()
