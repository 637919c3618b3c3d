"""Time-averaged KV-block utilization per worker role inside a window.

    python scripts/footprint_window.py results/pd-footprint --t0 5 --t1 65
"""

import argparse
import csv
import json
from pathlib import Path

from servesim.metrics import time_average

NS = 1_000_000_000


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run", type=Path)
    p.add_argument("--t0", type=float, default=5.0)
    p.add_argument("--t1", type=float, default=65.0)
    args = p.parse_args()

    workers = json.loads((args.run / "summary.json").read_text())["workers"]
    series = {w["id"]: [] for w in workers}
    with (args.run / "footprint.csv").open() as f:
        for row in csv.DictReader(f):
            t = round(float(row["time_s"]) * NS)
            series[int(row["worker"])].append((t, float(row["utilization"])))
    t0, t1 = round(args.t0 * NS), round(args.t1 * NS)
    by_role = {}
    for w in workers:
        by_role.setdefault(w["role"], []).append(time_average(series[w["id"]], t0, t1))
    for role, vals in sorted(by_role.items()):
        print(f"{role:8s} workers {len(vals)}  mean utilization {sum(vals) / len(vals):.4f}")


if __name__ == "__main__":
    main()
