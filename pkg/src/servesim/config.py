"""Run configuration: schema, strict loading, validation, cluster assembly.

A config is a YAML (or JSON) mapping whose sections mirror the dataclasses
below. Unknown keys are errors, and every error names the offending path,
e.g. ``hardware[1].role: unknown role 'decoder'``. See CONFIG.md.
"""

from __future__ import annotations

import copy
import dataclasses
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from . import comm
from .costmodel import COST_MODELS, CostModelError, HardwareSpec, builtin_hardware
from .engine import DECODE, PREFILL, ROLES, UNIFIED, Cluster, MemorySettings, RunReport, WorkerSpec
from .kernel import to_ns
from .memory import pool_size
from .metrics import SloSpec
from .model import END, Breakpoint, ModelError, ModelSpec, OperatorSpec, builtin, weight_bytes
from .model import kv_bytes_per_token
from .sched import GLOBAL_POLICIES, LOCAL_POLICIES, BatchLimits, make_global_policy, make_local_policy
from .workload import Dist, WorkloadError, WorkloadSpec, generate

INF = "inf"


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e9`` / ``2.5E-3`` as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def parse_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    name: str = "llama2-7b"
    # field-by-field changes to the built-in shape (num_layers, hidden_dim, ...)
    overrides: dict = field(default_factory=dict)
    # replaces the default operator list when given
    operators: Optional[list[OperatorSpec]] = None
    # operator indices (or "end") where the local policy is consulted
    breakpoints: list[Union[int, str]] = field(default_factory=lambda: [END])


@dataclass
class WorkerGroup:
    hardware: str = "a100"
    overrides: dict = field(default_factory=dict)  # HardwareSpec fields
    role: str = UNIFIED
    count: int = 1


@dataclass
class LinkConfig:
    src: str = ""
    dst: str = ""
    bandwidth: float = comm.constants.DEVICE_LINK_BANDWIDTH  # bytes/s
    latency_ns: int = 0
    mode: str = comm.SEQUENTIAL
    buffer_bytes: int = 0
    chunk_bytes: int = 0


@dataclass
class SchedulerConfig:
    global_policy: str = "round-robin"
    local_policy: str = "continuous"
    max_batch_size: Union[int, str] = INF
    max_prefill_tokens: Optional[int] = 4096
    chunk_size: Optional[int] = None
    victim_policy: str = "latest-arrival"


@dataclass
class CacheConfig:
    enabled: bool = False
    capacity: Optional[int] = None  # bytes; None = 4x the cluster's device KV bytes
    per_block_fetch_ns: int = 800


@dataclass
class MemoryConfig:
    block_size: int = 16
    max_mem_ratio: float = 1.0
    reserve_fraction: float = 0.05
    cache: CacheConfig = field(default_factory=CacheConfig)


@dataclass
class OutputConfig:
    dir: Optional[str] = None
    events: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    horizon: Optional[float] = None  # seconds; None runs until every request is done
    cost_model: str = "roofline"
    model: ModelConfig = field(default_factory=ModelConfig)
    hardware: list[WorkerGroup] = field(default_factory=lambda: [WorkerGroup()])
    links: list[LinkConfig] = field(default_factory=list)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    slo: SloSpec = field(default_factory=SloSpec)
    output: OutputConfig = field(default_factory=OutputConfig)


# -- generic dict <-> dataclass ----------------------------------------------------


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _is_dataclass_type(t) -> bool:
    return isinstance(t, type) and dataclasses.is_dataclass(t)


def _convert(value, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if tp is Any:
        return value
    if origin is Union or (hasattr(types, "UnionType") and isinstance(tp, types.UnionType)):
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: value required")
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _convert(value, a, path)
            except ConfigError as e:
                errors.append(str(e))
        raise ConfigError(errors[0] if len(errors) == 1 else f"{path}: invalid value {value!r}")
    if _is_dataclass_type(tp):
        if tp is Dist and isinstance(value, int) and not isinstance(value, bool):
            return Dist("fixed", value=value)
        return from_dict(tp, value, path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        (inner,) = args[:1] or (Any,)
        return [_convert(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict or tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, path: str = ""):
    """Build dataclass ``cls`` from a mapping; unknown keys are errors."""
    where = path or "<config>"
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = _hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names), key=str)
    if unknown:
        raise ConfigError(
            f"{path + '.' if path else ''}{unknown[0]}: unknown key (allowed: {', '.join(names)})"
        )
    kwargs = {}
    for name in names:
        if name in data:
            kwargs[name] = _convert(data[name], hints[name], f"{path}.{name}" if path else name)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from None


def to_dict(obj) -> Any:
    """Plain-data form of a config dataclass (inverse of ``from_dict``)."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def loads(text: str) -> RunConfig:
    try:
        data = parse_yaml(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    cfg = from_dict(RunConfig, data)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    return loads(text)


# -- validation ---------------------------------------------------------------------


_HW_HINTS = typing.get_type_hints(HardwareSpec)
_MODEL_HINTS = typing.get_type_hints(ModelSpec)


def build_model(mc: ModelConfig) -> ModelSpec:
    allowed = {f.name for f in dataclasses.fields(ModelSpec)} - {"name", "operators", "breakpoints"}
    for k in mc.overrides:
        if k not in allowed:
            raise ConfigError(f"model.overrides.{k}: unknown model field")
        _convert(mc.overrides[k], _MODEL_HINTS[k], f"model.overrides.{k}")
    extra = {}
    if mc.operators is not None:
        extra["operators"] = tuple(mc.operators)
    for i, bp in enumerate(mc.breakpoints):
        if bp != END and (isinstance(bp, bool) or not isinstance(bp, int)):
            raise ConfigError(f"model.breakpoints[{i}]: expected an operator index or 'end'")
    extra["breakpoints"] = tuple(Breakpoint(bp) for bp in mc.breakpoints)
    try:
        return builtin(mc.name, **mc.overrides, **extra)
    except (ModelError, TypeError) as e:
        raise ConfigError(f"model: {e}") from None


def build_workers(cfg: RunConfig) -> list[WorkerSpec]:
    allowed = {f.name for f in dataclasses.fields(HardwareSpec)} - {"name"}
    out = []
    for i, g in enumerate(cfg.hardware):
        where = f"hardware[{i}]"
        for k in g.overrides:
            if k not in allowed:
                raise ConfigError(f"{where}.overrides.{k}: unknown hardware field")
            _convert(g.overrides[k], _HW_HINTS[k], f"{where}.overrides.{k}")
        if g.role not in ROLES:
            raise ConfigError(f"{where}.role: unknown role {g.role!r} (known: {', '.join(ROLES)})")
        if g.count < 1:
            raise ConfigError(f"{where}.count: must be >= 1")
        try:
            hw = builtin_hardware(g.hardware, **g.overrides)
        except (CostModelError, TypeError) as e:
            raise ConfigError(f"{where}: {e}") from None
        out.extend(WorkerSpec(hw, g.role) for _ in range(g.count))
    return out


def batch_limit(s: SchedulerConfig) -> Optional[int]:
    return None if s.max_batch_size == INF else s.max_batch_size


def validate(cfg: RunConfig) -> None:
    """Cross-section checks; raises ConfigError naming the offending path."""
    if cfg.horizon is not None and not cfg.horizon > 0:
        raise ConfigError("horizon: must be positive")
    if cfg.cost_model not in COST_MODELS:
        raise ConfigError(f"cost_model: unknown cost model {cfg.cost_model!r}")
    model = build_model(cfg.model)
    if not cfg.hardware:
        raise ConfigError("hardware: at least one worker group is required")
    workers = build_workers(cfg)
    wb = weight_bytes(model)
    kvpt = kv_bytes_per_token(model)
    mem = cfg.memory
    if mem.block_size < 1:
        raise ConfigError("memory.block_size: must be >= 1")
    if not 0 < mem.max_mem_ratio <= 1:
        raise ConfigError("memory.max_mem_ratio: must be in (0, 1]")
    if not 0 <= mem.reserve_fraction < 1:
        raise ConfigError("memory.reserve_fraction: must be in [0, 1)")
    if mem.cache.capacity is not None and mem.cache.capacity < 0:
        raise ConfigError("memory.cache.capacity: must be >= 0")
    if mem.cache.per_block_fetch_ns < 0:
        raise ConfigError("memory.cache.per_block_fetch_ns: must be >= 0")
    for i, g in enumerate(cfg.hardware):
        hw = workers[sum(x.count for x in cfg.hardware[:i])].hardware
        if hw.mem_capacity < wb:
            raise ConfigError(
                f"hardware[{i}].mem_capacity: capacity {hw.mem_capacity:.0f} B is lower than "
                f"the model weight bytes {wb} B"
            )
        if pool_size(hw.mem_capacity, wb, kvpt, mem.block_size, mem.reserve_fraction) < 1:
            raise ConfigError(
                f"hardware[{i}].mem_capacity: no room for a single KV block after weights and reserve"
            )

    s = cfg.scheduler
    if s.local_policy not in LOCAL_POLICIES:
        raise ConfigError(
            f"scheduler.local_policy: unknown policy {s.local_policy!r} "
            f"(known: {', '.join(sorted(LOCAL_POLICIES))})"
        )
    if s.global_policy not in GLOBAL_POLICIES:
        raise ConfigError(
            f"scheduler.global_policy: unknown policy {s.global_policy!r} "
            f"(known: {', '.join(sorted(GLOBAL_POLICIES))})"
        )
    if isinstance(s.max_batch_size, str) and s.max_batch_size != INF:
        raise ConfigError("scheduler.max_batch_size: expected a positive integer or 'inf'")
    if isinstance(s.max_batch_size, int) and s.max_batch_size < 1:
        raise ConfigError("scheduler.max_batch_size: must be >= 1")
    if s.max_prefill_tokens is not None and s.max_prefill_tokens < 1:
        raise ConfigError("scheduler.max_prefill_tokens: must be >= 1")
    if s.chunk_size is not None and s.chunk_size < 1:
        raise ConfigError("scheduler.chunk_size: must be >= 1")
    if s.victim_policy not in ("latest-arrival", "earliest-arrival"):
        raise ConfigError(f"scheduler.victim_policy: unknown policy {s.victim_policy!r}")
    roles = {w.role for w in workers}
    allowed_roles = set(LOCAL_POLICIES[s.local_policy].roles)
    if not roles <= allowed_roles:
        bad = sorted(roles - allowed_roles)[0]
        raise ConfigError(
            f"hardware: role {bad!r} is not supported by local policy {s.local_policy!r} "
            f"(allowed: {', '.join(sorted(allowed_roles))})"
        )
    if roles & {PREFILL, DECODE} and roles != {PREFILL, DECODE}:
        raise ConfigError("hardware: disaggregated serving needs both prefill and decode workers")

    names = {f"w{i}" for i in range(len(workers))} | {comm.HOST}
    seen = set()
    for i, lk in enumerate(cfg.links):
        for end in ("src", "dst"):
            v = getattr(lk, end)
            if v not in names:
                raise ConfigError(f"links[{i}].{end}: unknown endpoint {v!r} (workers are w0..w{len(workers) - 1} and 'host')")
        if lk.src == lk.dst:
            raise ConfigError(f"links[{i}]: src and dst are the same endpoint")
        if (lk.src, lk.dst) in seen:
            raise ConfigError(f"links[{i}]: duplicate link {lk.src}->{lk.dst}")
        seen.add((lk.src, lk.dst))
        try:
            _link(lk)
        except comm.LinkError as e:
            raise ConfigError(f"links[{i}]: {e}") from None

    try:
        cfg.workload.validate()
    except WorkloadError as e:
        raise ConfigError(str(e)) from None


def _link(lk: LinkConfig) -> comm.Link:
    return comm.Link(lk.src, lk.dst, lk.bandwidth, lk.latency_ns, lk.mode, lk.buffer_bytes, lk.chunk_bytes)


# -- assembly ---------------------------------------------------------------------------


def build(cfg: RunConfig, debug: bool = False) -> Cluster:
    validate(cfg)
    model = build_model(cfg.model)
    workers = build_workers(cfg)
    try:
        requests = generate(cfg.workload, cfg.seed)
    except WorkloadError as e:
        raise ConfigError(str(e)) from None
    s = cfg.scheduler
    limits = BatchLimits(batch_limit(s), s.max_prefill_tokens, s.chunk_size, cfg.memory.max_mem_ratio)
    mem = cfg.memory
    settings = MemorySettings(
        block_size=mem.block_size,
        max_mem_ratio=mem.max_mem_ratio,
        reserve_fraction=mem.reserve_fraction,
        cache_enabled=mem.cache.enabled,
        cache_capacity=mem.cache.capacity,
        fetch_ns_per_block=mem.cache.per_block_fetch_ns,
    )
    links = {(lk.src, lk.dst): _link(lk) for lk in cfg.links}
    return Cluster(
        model,
        workers,
        requests,
        lambda spec: make_local_policy(s.local_policy, copy.copy(limits)),
        make_global_policy(s.global_policy),
        memory=settings,
        links=links,
        cost_model=cfg.cost_model,
        victim_policy=s.victim_policy,
        debug=debug,
    )


def simulate(cfg: RunConfig, debug: bool = False) -> RunReport:
    cluster = build(cfg, debug)
    horizon = None if cfg.horizon is None else to_ns(cfg.horizon)
    return cluster.run(horizon)


# -- paths for sweeps and overrides ----------------------------------------------------------


def _split(path: str) -> list:
    out = []
    for part in path.split("."):
        if not part:
            raise ConfigError(f"{path}: malformed path")
        out.append(int(part) if part.isdigit() else part)
    return out


def set_path(data: dict, path: str, value) -> None:
    """Set ``a.b.0.c`` inside the plain-data form of a config.

    Every segment must already exist, except keys inside free-form
    ``overrides`` mappings.
    """
    parts = _split(path)
    node = data
    for i, key in enumerate(parts):
        last = i == len(parts) - 1
        prefix = ".".join(map(str, parts[: i + 1]))
        if isinstance(node, list):
            if not isinstance(key, int) or not 0 <= key < len(node):
                raise ConfigError(f"{prefix}: no such list element")
        elif isinstance(node, dict):
            if key not in node:
                free = i > 0 and parts[i - 1] == "overrides"
                if not (free and last):
                    raise ConfigError(f"{prefix}: path does not resolve in the config")
        else:
            raise ConfigError(f"{prefix}: cannot descend into a {type(node).__name__}")
        if last:
            node[key] = value
        else:
            node = node[key]


def with_overrides(cfg: RunConfig, changes: dict) -> RunConfig:
    data = to_dict(cfg)
    for path, value in changes.items():
        set_path(data, path, copy.deepcopy(value))
    new = from_dict(RunConfig, data)
    validate(new)
    return new
