"""Plot the CSV artifacts of a ``verify``/``solve``/``bounds`` run (needs matplotlib)."""

import argparse
import csv
import sys
from pathlib import Path


def read(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {key: [float(r[key]) if key != "kind" and key != "valid" else r[key] for r in rows] for key in rows[0]}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("run_dir", help="directory written by volterra-dp")
    args = p.parse_args()
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; pip install matplotlib to plot", file=sys.stderr)
        return 1

    d = Path(args.run_dir)
    if (d / "trajectory.csv").exists():
        fig, ax = plt.subplots()
        full = read(d / "trajectory.csv")
        ax.plot(full["t"], full["x"], "k", lw=2, label="x")
        for f in sorted(d.glob("truncated_N*.csv")):
            tr = read(f)
            ax.plot(tr["t"], tr["x"], lw=1, label=f.stem.split("_")[1])
        ax.set_xlabel("t")
        ax.legend()
        fig.savefig(d / "trajectories.png", dpi=120)
    if (d / "bounds.csv").exists():
        b = read(d / "bounds.csv")
        fig, ax = plt.subplots()
        for kind in sorted(set(b["kind"])):
            idx = [i for i, k in enumerate(b["kind"]) if k == kind]
            N = [b["N"][i] for i in idx]
            ax.semilogy(N, [max(b["observed"][i], 1e-17) for i in idx], "o-", label=f"{kind} observed")
            ax.semilogy(N, [max(b["bound"][i], 1e-17) for i in idx], "--", label=f"{kind} bound")
        ax.set_xlabel("N")
        ax.legend(fontsize=7)
        fig.savefig(d / "bounds.png", dpi=120)
    if (d / "costate.csv").exists():
        c = read(d / "costate.csv")
        fig, ax = plt.subplots()
        for key in [k for k in c if k != "t"][:4]:
            ax.plot(c["t"], c[key], label=key)
        ax.set_xlabel("t")
        ax.legend()
        fig.savefig(d / "costate.png", dpi=120)
    print(f"plots written to {d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
