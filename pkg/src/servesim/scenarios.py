"""Built-in experiment presets.

Each preset is either a single RunConfig or a SweepSpec over one. QPS grids
are our own choices (documented per preset); sweep axes can be edited after
``scenario(name)`` returns or overridden from a sweep file.
"""

from __future__ import annotations

from typing import Callable, Union

from . import constants
from .config import ConfigError, RunConfig, WorkerGroup
from .engine import DECODE, PREFILL
from .sweep import Axis, SweepSpec
from .workload import Dist

A100 = constants.HARDWARE["a100"]

SCENARIOS: dict[str, Callable[[], Union[RunConfig, SweepSpec]]] = {}


def preset(name: str):
    def deco(fn):
        SCENARIOS[name] = fn
        return fn

    return deco


def scenario(name: str) -> Union[RunConfig, SweepSpec]:
    try:
        fn = SCENARIOS[name]
    except KeyError:
        known = ", ".join(sorted(SCENARIOS))
        raise ConfigError(f"unknown scenario {name!r} (known: {known})") from None
    return fn()


def _disaggregated(prefill: int, decode: int, decode_hw: str = "a100") -> RunConfig:
    c = RunConfig()
    c.hardware = [
        WorkerGroup("a100", {}, PREFILL, prefill),
        WorkerGroup(decode_hw, {}, DECODE, decode),
    ]
    c.scheduler.local_policy = "disaggregated"
    c.scheduler.global_policy = "least-outstanding"
    return c


@preset("static-vs-continuous")
def static_vs_continuous() -> SweepSpec:
    """Static vs continuous batching, batch size 32, over QPS."""
    c = RunConfig()
    c.scheduler.max_batch_size = 32
    w = c.workload
    w.num_requests = 2000
    w.prompt_len = Dist("uniform", lo=16, hi=512)
    w.output_len = Dist("uniform", lo=16, hi=512)
    return SweepSpec(
        c,
        [
            Axis(["static", "continuous"], path="scheduler.local_policy"),
            Axis([1.0, 2.0, 3.0, 4.0], path="workload.qps"),
        ],
        "static-vs-continuous",
    )


@preset("continuous-50k")
def continuous_50k() -> RunConfig:
    """50,000 requests under continuous batching with no batch-size limit."""
    c = RunConfig()
    w = c.workload
    w.num_requests = 50_000
    w.qps = 4.0
    w.prompt_len = Dist("uniform", lo=16, hi=512)
    w.output_len = Dist("uniform", lo=16, hi=512)
    return c


@preset("mem-ratio")
def mem_ratio() -> SweepSpec:
    """Admission memory ratio on a memory-starved device (20 GB, long outputs)."""
    c = RunConfig()
    c.hardware = [WorkerGroup("a100", {"mem_capacity": 20e9})]
    w = c.workload
    w.num_requests = 1000
    w.qps = 3.0
    w.prompt_len = Dist("uniform", lo=16, hi=128)
    w.output_len = Dist("uniform", lo=256, hi=1024)
    return SweepSpec(
        c,
        [Axis([1.0, 0.9, 0.8, 0.7, 0.6, 0.5], path="memory.max_mem_ratio")],
        "mem-ratio",
    )


@preset("pd-ratio")
def pd_ratio() -> SweepSpec:
    """Prefill/decode device split on an 8-device node, P1-D7 through P7-D1."""
    c = _disaggregated(1, 7)
    w = c.workload
    w.num_requests = 1000
    w.qps = 12.0
    w.prompt_len = Dist("poisson", mean=512)
    w.output_len = Dist("poisson", mean=128)
    splits = [[p, 8 - p] for p in range(1, 8)]
    return SweepSpec(
        c, [Axis(splits, paths=["hardware.0.count", "hardware.1.count"])], "pd-ratio"
    )


@preset("pd-hardware")
def pd_hardware() -> SweepSpec:
    """Decode-side hardware alternatives with one or two A100 prefill devices."""
    c = _disaggregated(1, 7)
    w = c.workload
    w.num_requests = 1000
    w.qps = 8.0
    w.prompt_len = Dist("poisson", mean=256)
    w.output_len = Dist("poisson", mean=256)
    return SweepSpec(
        c,
        [
            Axis([1, 2], path="hardware.0.count"),
            Axis(["a100", "v100", "gddr6-aim", "a100-quarter-flops"], path="hardware.1.hardware"),
        ],
        "pd-hardware",
    )


PD_FOOTPRINT_WINDOW = (5.0, 65.0)  # seconds


@preset("pd-footprint")
def pd_footprint() -> RunConfig:
    """Memory footprint of prefill vs decode devices, P1-D7, 128 in / 1024 out."""
    c = _disaggregated(1, 7)
    c.horizon = PD_FOOTPRINT_WINDOW[1]
    c.output.events = True
    w = c.workload
    w.num_requests = 10_000
    w.qps = 24.0
    w.prompt_len = Dist("fixed", value=128)
    w.output_len = Dist("fixed", value=1024)
    return c


@preset("mem-cache")
def mem_cache() -> SweepSpec:
    """Host memory cache for multi-round chats, output mean 32 vs 64, over QPS."""
    c = RunConfig()
    w = c.workload
    w.num_requests = 400  # conversations
    w.rounds = Dist("chat-mix")
    w.prompt_len = Dist("poisson", mean=256)
    w.turn_prompt_len = Dist("poisson", mean=64)
    w.output_len = Dist("poisson", mean=64)
    return SweepSpec(
        c,
        [
            Axis([32.0, 64.0], path="workload.output_len.mean"),
            Axis([2.0, 4.0, 8.0], path="workload.qps"),
            Axis([False, True], path="memory.cache.enabled"),
        ],
        "mem-cache",
    )


# prefill-device variants: name -> overrides of the prefill worker group
HW_VARIANTS = {
    "ori": {},
    "-c4": {"mem_capacity": A100["mem_capacity"] / 4},
    "-c2": {"mem_capacity": A100["mem_capacity"] / 2},
    "c2": {"mem_capacity": A100["mem_capacity"] * 2},
    "c4": {"mem_capacity": A100["mem_capacity"] * 4},
    "-b8": {"mem_bandwidth": A100["mem_bandwidth"] / 8},
    "-b4": {"mem_bandwidth": A100["mem_bandwidth"] / 4},
    "-b2": {"mem_bandwidth": A100["mem_bandwidth"] / 2},
    "b2": {"mem_bandwidth": A100["mem_bandwidth"] * 2},
    "b4": {"mem_bandwidth": A100["mem_bandwidth"] * 4},
    "-t2": {"peak_flops": A100["peak_flops"] / 2},
    "t2": {"peak_flops": A100["peak_flops"] * 2},
}


@preset("hw-sweep")
def hw_sweep() -> SweepSpec:
    """Prefill-device capacity, bandwidth and FLOPS variants over QPS, P1-D7."""
    c = _disaggregated(1, 7)
    w = c.workload
    w.num_requests = 1500
    w.prompt_len = Dist("uniform", lo=512, hi=1536)
    w.output_len = Dist("uniform", lo=32, hi=256)
    return SweepSpec(
        c,
        [
            Axis(list(HW_VARIANTS.values()), path="hardware.0.overrides"),
            Axis([6.0, 8.0, 10.0, 12.0, 13.0, 14.0, 15.0], path="workload.qps"),
        ],
        "hw-sweep",
    )
