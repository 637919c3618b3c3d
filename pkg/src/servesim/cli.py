"""Command-line entry point.

    servesim run CONFIG [--seed N] [--out DIR] [--events]
    servesim sweep SPEC [--parallel N] [--out DIR]
    servesim scenario NAME [--out DIR] [--parallel N] [--seed N] [--dump]
    servesim scenario --list

Output goes to ``--out``, else ``output.dir`` from the config, else
``$SERVESIM_OUT``, else ``./out``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage,
3 sweep finished with some failed points.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import metrics
from .config import ConfigError, RunConfig, dumps, load, simulate, with_overrides
from .scenarios import SCENARIOS, scenario
from .sweep import SweepSpec, failures, load_sweep, run_sweep

OUT_ENV = "SERVESIM_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3


def _out_dir(flag: Optional[str], cfg_dir: Optional[str], leaf: str = "") -> Path:
    if flag:
        return Path(flag)
    if cfg_dir:
        return Path(cfg_dir)
    base = Path(os.environ.get(OUT_ENV) or "out")
    return base / leaf if leaf else base


def _brief(s: dict) -> str:
    return (
        f"finished {s['finished']}/{s['requests']}  "
        f"throughput {s['throughput_rps']:.3f} req/s  "
        f"goodput {s['goodput_both_rps']:.3f} req/s  "
        f"p99 e2e {s['e2e_s']['p99']} s  preemptions {s['preemptions']}"
    )


def run_config(cfg: RunConfig, out: Path, events: bool = False) -> dict:
    report = simulate(cfg)
    s = metrics.export(report, out, cfg.slo, events or cfg.output.events)
    (out / "config.yaml").write_text(dumps(cfg))
    return s


def _seeded(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    return cfg if seed is None else with_overrides(cfg, {"seed": seed})


def cmd_run(args) -> int:
    cfg = _seeded(load(args.config), args.seed)
    out = _out_dir(args.out, cfg.output.dir, Path(args.config).stem)
    s = run_config(cfg, out, args.events)
    print(f"{out}: {_brief(s)}")
    return EXIT_OK


def _sweep(spec: SweepSpec, out: Path, parallel: int) -> int:
    index = run_sweep(spec, out, parallel)
    for e in index["points"]:
        tag = json.dumps(e["values"], sort_keys=True)
        if e.get("status") == "ok":
            sm = e["summary"]
            print(f"{e['dir']} {tag}: goodput {sm['goodput_both_rps']:.3f} req/s")
        else:
            print(f"{e['dir']} {tag}: FAILED {e.get('error')}")
    bad = failures(index)
    print(f"{out}/index.json: {len(index['points']) - bad} ok, {bad} failed")
    return EXIT_PARTIAL if bad else EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec)
    out = _out_dir(args.out, None, Path(args.spec).stem)
    return _sweep(spec, out, args.parallel)


def cmd_scenario(args) -> int:
    if args.list or not args.name:
        for name in sorted(SCENARIOS):
            print(f"{name:22s} {SCENARIOS[name].__doc__.strip().splitlines()[0]}")
        return EXIT_OK
    preset = scenario(args.name)
    if args.seed is not None:
        if isinstance(preset, SweepSpec):
            preset.base = with_overrides(preset.base, {"seed": args.seed})
        else:
            preset = _seeded(preset, args.seed)
    if args.dump:
        if isinstance(preset, SweepSpec):
            from .config import to_dict
            import yaml

            print(yaml.safe_dump(to_dict(preset), sort_keys=False), end="")
        else:
            print(dumps(preset), end="")
        return EXIT_OK
    out = _out_dir(args.out, None, args.name)
    if isinstance(preset, SweepSpec):
        return _sweep(preset, out, args.parallel)
    s = run_config(preset, out)
    print(f"{out}: {_brief(s)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="servesim", description="LLM serving simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None)
    r.add_argument("--events", action="store_true", help="also write events.csv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a grid sweep")
    s.add_argument("spec")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("scenario", help="run a built-in experiment preset")
    c.add_argument("name", nargs="?")
    c.add_argument("--list", action="store_true")
    c.add_argument("--dump", action="store_true", help="print the preset instead of running it")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--parallel", type=int, default=1)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "parallel", 1) < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
