"""Plot e2e-latency CDFs from one or more run directories.

    python scripts/plot_cdf.py results/static-vs-continuous/00{0,4} -o cdf.png

Needs matplotlib, which is not a dependency of the package.
"""

import argparse
import csv
import sys
from pathlib import Path


def read_cdf(run_dir: Path):
    with (run_dir / "cdf.csv").open() as f:
        rows = list(csv.DictReader(f))
    return [float(r["e2e_s"]) for r in rows], [float(r["cumulative_fraction"]) for r in rows]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("-o", "--output", default="cdf.png")
    p.add_argument("--log", action="store_true", help="log-scale latency axis")
    args = p.parse_args()
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        sys.exit("plot_cdf.py needs matplotlib (pip install matplotlib)")

    fig, ax = plt.subplots(figsize=(6, 4))
    for run in args.runs:
        x, y = read_cdf(run)
        ax.step(x, y, where="post", label=str(run))
    if args.log:
        ax.set_xscale("log")
    ax.set_xlabel("end-to-end latency (s)")
    ax.set_ylabel("fraction of requests")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(args.output)


if __name__ == "__main__":
    main()
