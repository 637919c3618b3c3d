"""Grid sweeps over config paths, one output directory per point."""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from . import metrics
from .config import (
    ConfigError,
    RunConfig,
    dumps,
    from_dict,
    parse_yaml,
    simulate,
    to_dict,
    validate,
    with_overrides,
)

# summary fields copied into index.json for quick comparison across points
INDEX_FIELDS = (
    "finished",
    "rejected",
    "unfinished",
    "throughput_rps",
    "goodput_both_rps",
    "goodput_decode_rps",
    "preemptions",
)


@dataclass
class Axis:
    """One sweep dimension.

    ``path`` sets a single config path; ``paths`` sets several together, in
    which case every entry of ``values`` is a list with one value per path.
    """

    values: list
    path: Optional[str] = None
    paths: Optional[list[str]] = None

    def targets(self) -> list[str]:
        if (self.path is None) == (self.paths is None):
            raise ConfigError("axis needs exactly one of 'path' or 'paths'")
        return [self.path] if self.path is not None else list(self.paths)

    def assignments(self) -> list[dict]:
        targets = self.targets()
        if not self.values:
            raise ConfigError(f"axis {targets}: empty value list")
        out = []
        for v in self.values:
            if len(targets) == 1:
                out.append({targets[0]: v})
            else:
                if not isinstance(v, (list, tuple)) or len(v) != len(targets):
                    raise ConfigError(f"axis {targets}: value {v!r} must list one entry per path")
                out.append(dict(zip(targets, v)))
        return out


@dataclass
class SweepSpec:
    base: RunConfig = field(default_factory=RunConfig)
    axes: list[Axis] = field(default_factory=list)
    name: str = "sweep"

    def __getattr__(self, attr):
        # read-through to the base config, so preset.workload / preset.slo work
        if attr.startswith("__") or attr == "base":
            raise AttributeError(attr)
        return getattr(self.base, attr)

    def points(self) -> list[dict]:
        """Grid product of the axes; later axes vary fastest."""
        grids = [a.assignments() for a in self.axes]
        out = []
        for combo in itertools.product(*grids):
            changes: dict = {}
            for part in combo:
                changes.update(part)
            out.append(changes)
        return out

    def configs(self) -> list[RunConfig]:
        return [with_overrides(self.base, c) for c in self.points()]


def load_sweep(path) -> SweepSpec:
    p = Path(path)
    try:
        data = parse_yaml(p.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read sweep spec {p}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: sweep spec must be a mapping")
    data = dict(data)
    base = data.get("base")
    if isinstance(base, str):
        bp = (p.parent / base) if not Path(base).is_absolute() else Path(base)
        try:
            data["base"] = parse_yaml(bp.read_text())
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"base: cannot read {bp}: {e}") from None
    spec = from_dict(SweepSpec, data)
    validate(spec.base)
    for c in spec.points():
        with_overrides(spec.base, c)  # fail early on a bad path or value
    return spec


def _run_point(cfg_data: dict, out_dir: str) -> dict:
    try:
        cfg = from_dict(RunConfig, cfg_data)
        report = simulate(cfg)
        out = Path(out_dir)
        s = metrics.export(report, out, cfg.slo, cfg.output.events)
        (out / "config.yaml").write_text(dumps(cfg))
        return {"status": "ok", "summary": {k: s[k] for k in INDEX_FIELDS}}
    except Exception as e:  # recorded per point; the sweep carries on
        return {"status": "error", "error": f"{type(e).__name__}: {e}"}


def run_sweep(spec: SweepSpec, out_dir, parallel: int = 1) -> dict:
    """Run every grid point and write ``index.json``; returns the index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = spec.points()
    jobs = []
    entries = []
    for i, changes in enumerate(points):
        d = f"{i:03d}"
        entry: dict[str, Any] = {"index": i, "dir": d, "values": changes}
        try:
            cfg = with_overrides(spec.base, changes)
        except ConfigError as e:
            entry.update(status="error", error=f"ConfigError: {e}")
            entries.append(entry)
            continue
        entries.append(entry)
        jobs.append((entry, to_dict(cfg), str(out / d)))
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_point, [j[1] for j in jobs], [j[2] for j in jobs]))
    else:
        results = [_run_point(c, d) for _, c, d in jobs]
    for (entry, _, _), res in zip(jobs, results):
        entry.update(res)
    index = {
        "name": spec.name,
        "axes": [a.targets() for a in spec.axes],
        "points": entries,
    }
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def failures(index: dict) -> int:
    return sum(1 for e in index["points"] if e.get("status") != "ok")
