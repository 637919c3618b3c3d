"""Run every built-in preset (or a chosen subset) and print a goodput table.

    python scripts/run_scenarios.py --out results --parallel 4
    python scripts/run_scenarios.py mem-ratio pd-ratio
"""

import argparse
import json
import time
from pathlib import Path

from servesim.cli import run_config
from servesim.scenarios import SCENARIOS, scenario
from servesim.sweep import SweepSpec, run_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", help="presets to run (default: all)")
    p.add_argument("--out", default="results")
    p.add_argument("--parallel", type=int, default=1)
    args = p.parse_args()

    names = args.names or sorted(SCENARIOS)
    for name in names:
        preset = scenario(name)
        out = Path(args.out) / name
        t0 = time.perf_counter()
        if isinstance(preset, SweepSpec):
            index = run_sweep(preset, out, args.parallel)
            print(f"== {name} ({time.perf_counter() - t0:.1f} s)")
            for e in index["points"]:
                tag = json.dumps(e["values"], sort_keys=True)
                if e["status"] == "ok":
                    s = e["summary"]
                    print(f"  {e['dir']} {tag}: goodput {s['goodput_both_rps']:.3f} req/s, "
                          f"preemptions {s['preemptions']}")
                else:
                    print(f"  {e['dir']} {tag}: FAILED {e['error']}")
        else:
            s = run_config(preset, out)
            print(f"== {name} ({time.perf_counter() - t0:.1f} s): finished {s['finished']}, "
                  f"goodput {s['goodput_both_rps']:.3f} req/s")


if __name__ == "__main__":
    main()
