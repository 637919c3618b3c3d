"""Per-request records, latency statistics, SLO goodput and file export.

All raw times are integer nanoseconds. Exported times are seconds printed
with exactly nine decimals straight from the integer, so files are
byte-stable across platforms.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .workload import FINISHED, REJECTED

NS_PER_S = 1_000_000_000
PERCENTILES = (50, 90, 99, 100)

BOTH = "both"  # TTFT and mTPOT
DECODE_ONLY = "decode"  # mTPOT only


@dataclass(frozen=True)
class SloSpec:
    ttft: float = 15.0  # seconds
    mtpot: float = 0.3  # seconds, bound on every gap between consecutive tokens

    def __post_init__(self):
        if not (self.ttft > 0 and self.mtpot > 0):
            raise ValueError("SLO thresholds must be positive")

    @property
    def ttft_ns(self) -> int:
        return _s_to_ns(self.ttft)

    @property
    def mtpot_ns(self) -> int:
        return _s_to_ns(self.mtpot)


def _s_to_ns(s: float) -> int:
    x = Fraction(repr(float(s))) * NS_PER_S
    return (2 * x.numerator + x.denominator) // (2 * x.denominator)


def fmt_s(ns: Optional[int]) -> str:
    """Integer ns -> seconds with nine decimals; empty for missing values."""
    if ns is None:
        return ""
    sign = "-" if ns < 0 else ""
    ns = abs(ns)
    return f"{sign}{ns // NS_PER_S}.{ns % NS_PER_S:09d}"


def percentile(values: Sequence, p: float):
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not len(values):
        raise ValueError("percentile of empty sequence")
    if not 0 <= p <= 100:
        raise ValueError("p must be within [0, 100]")
    xs = sorted(values)
    rank = math.ceil(Fraction(str(p)) / 100 * len(xs))
    return xs[max(rank, 1) - 1]


@dataclass
class RequestRecord:
    id: int
    conversation_id: int
    round_index: int
    state: str
    arrival: Optional[int]
    prompt_len: int
    output_len: int
    generated: int
    cache_hit_tokens: int
    preemptions: int
    prefill_worker: int
    decode_worker: int
    first_token: Optional[int] = None
    finish: Optional[int] = None
    ttft: Optional[int] = None
    e2e: Optional[int] = None
    max_inter_token: Optional[int] = None  # excludes the arrival -> first token gap

    @property
    def normalized_latency(self) -> Optional[float]:
        """Seconds of end-to-end latency per output token."""
        if self.e2e is None:
            return None
        return self.e2e / self.output_len / NS_PER_S

    def meets(self, slo: SloSpec, variant: str = BOTH) -> bool:
        if self.state != FINISHED:
            return False
        if self.max_inter_token > slo.mtpot_ns:
            return False
        return variant == DECODE_ONLY or self.ttft <= slo.ttft_ns


def records(requests: Iterable) -> list[RequestRecord]:
    out = []
    for r in requests:
        rec = RequestRecord(
            r.id,
            r.conversation_id,
            r.round_index,
            r.state,
            r.arrival_time,
            r.prompt_len,
            r.output_len,
            len(r.token_times),
            r.cache_hit_tokens,
            r.preemptions,
            r.prefill_worker,
            r.decode_worker,
        )
        if len(r.token_times):
            rec.first_token = r.token_times[0]
            rec.ttft = rec.first_token - r.arrival_time
        if r.state == FINISHED:
            rec.finish = r.finish_time
            rec.e2e = r.finish_time - r.arrival_time
            rec.max_inter_token = r.max_gap
        out.append(rec)
    return out


def span_ns(recs: Sequence[RequestRecord]) -> int:
    """First arrival to last completion; 0 when nothing finished."""
    arrivals = [r.arrival for r in recs if r.arrival is not None]
    finishes = [r.finish for r in recs if r.finish is not None]
    if not arrivals or not finishes:
        return 0
    return max(finishes) - min(arrivals)


def goodput(recs: Sequence[RequestRecord], slo: SloSpec = SloSpec(), variant: str = BOTH) -> float:
    """SLO-compliant finished requests per second of the run span."""
    if variant not in (BOTH, DECODE_ONLY):
        raise ValueError(f"unknown goodput variant {variant!r}")
    span = span_ns(recs)
    if span == 0:
        return 0.0
    good = sum(1 for r in recs if r.meets(slo, variant))
    return good * NS_PER_S / span


def throughput(recs: Sequence[RequestRecord]) -> float:
    span = span_ns(recs)
    if span == 0:
        return 0.0
    return sum(1 for r in recs if r.state == FINISHED) * NS_PER_S / span


# -- memory footprint ---------------------------------------------------------


def footprint_series(report) -> dict[int, list[tuple[int, float]]]:
    """Per worker: (time, utilization) samples in time order."""
    totals = {w["id"]: w["total_blocks"] for w in report.workers}
    series: dict[int, list] = {w: [] for w in totals}
    for t, wid, blocks in report.footprint:
        total = totals[wid]
        series[wid].append((t, blocks / total if total else 0.0))
    return series


def time_average(samples: Sequence[tuple[int, float]], t0: int, t1: int) -> float:
    """Average of the step function through ``samples`` over [t0, t1].

    The value at time t is the last sample at or before t; zero before the
    first sample.
    """
    if t1 <= t0:
        raise ValueError("empty window")
    acc = 0.0
    value = 0.0
    prev = t0
    for t, v in samples:
        if t > t1:
            break
        if t > prev:
            acc += value * (t - prev)
            prev = t
        value = v
    acc += value * (t1 - prev)
    return acc / (t1 - t0)


def mean_utilization(report, worker_ids: Iterable[int], t0: int, t1: int) -> float:
    series = footprint_series(report)
    ids = list(worker_ids)
    if not ids:
        raise ValueError("no workers selected")
    return sum(time_average(series[w], t0, t1) for w in ids) / len(ids)


# -- summary and export -----------------------------------------------------------


def _stats_s(values: list[int]) -> dict:
    if not values:
        return {f"p{p}" if p < 100 else "max": None for p in PERCENTILES}
    return {
        (f"p{p}" if p < 100 else "max"): float(fmt_s(percentile(values, p)))
        for p in PERCENTILES
    }


def _stats_float(values: list[float]) -> dict:
    if not values:
        return {f"p{p}" if p < 100 else "max": None for p in PERCENTILES}
    return {(f"p{p}" if p < 100 else "max"): percentile(values, p) for p in PERCENTILES}


def summary(report, slo: SloSpec = SloSpec()) -> dict:
    recs = records(report.requests)
    fin = [r for r in recs if r.state == FINISHED]
    rejected = sum(1 for r in recs if r.state == REJECTED)
    span = span_ns(recs)
    tokens = sum(r.generated for r in recs)
    end = report.end_time
    util = {}
    if end > 0:
        for wid, s in footprint_series(report).items():
            util[str(wid)] = time_average(s, 0, end)
    return {
        "requests": len(recs),
        "finished": len(fin),
        "rejected": rejected,
        "unfinished": len(recs) - len(fin) - rejected,
        "span_s": float(fmt_s(span)),
        "sim_end_s": float(fmt_s(end)),
        "throughput_rps": throughput(recs),
        "token_throughput": tokens * NS_PER_S / span if span else 0.0,
        "ttft_s": _stats_s([r.ttft for r in fin]),
        "e2e_s": _stats_s([r.e2e for r in fin]),
        "max_inter_token_s": _stats_s([r.max_inter_token for r in fin]),
        "normalized_latency_s": _stats_float([r.normalized_latency for r in fin]),
        "goodput_both_rps": goodput(recs, slo, BOTH),
        "goodput_decode_rps": goodput(recs, slo, DECODE_ONLY),
        "slo": asdict(slo),
        "preemptions": sum(r.preemptions for r in recs),
        "cache_hit_tokens": sum(r.cache_hit_tokens for r in recs),
        "mean_utilization": util,
        "workers": report.workers,
        "stats": report.stats,
    }


REQUEST_COLUMNS = (
    "id",
    "conversation_id",
    "round",
    "state",
    "prompt_len",
    "output_len",
    "generated",
    "arrival_s",
    "first_token_s",
    "finish_s",
    "ttft_s",
    "e2e_s",
    "normalized_latency_s",
    "max_inter_token_s",
    "preemptions",
    "cache_hit_tokens",
    "prefill_worker",
    "decode_worker",
)


def _request_row(r: RequestRecord) -> list:
    nl = r.normalized_latency
    return [
        r.id,
        r.conversation_id,
        r.round_index,
        r.state,
        r.prompt_len,
        r.output_len,
        r.generated,
        fmt_s(r.arrival),
        fmt_s(r.first_token),
        fmt_s(r.finish),
        fmt_s(r.ttft),
        fmt_s(r.e2e),
        "" if nl is None else f"{nl:.9f}",
        fmt_s(r.max_inter_token),
        r.preemptions,
        r.cache_hit_tokens,
        r.prefill_worker,
        r.decode_worker,
    ]


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export(report, out_dir, slo: SloSpec = SloSpec(), events: bool = False) -> dict:
    """Write requests.csv, footprint.csv, cdf.csv, summary.json (and events.csv)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from None
    recs = records(report.requests)
    _write_csv(out / "requests.csv", REQUEST_COLUMNS, (_request_row(r) for r in recs))
    totals = {w["id"]: w["total_blocks"] for w in report.workers}
    _write_csv(
        out / "footprint.csv",
        ("time_s", "worker", "allocated_blocks", "utilization"),
        (
            (fmt_s(t), wid, b, f"{b / totals[wid]:.9f}" if totals[wid] else "0.000000000")
            for t, wid, b in report.footprint
        ),
    )
    e2e = sorted(r.e2e for r in recs if r.e2e is not None)
    n = len(e2e)
    _write_csv(
        out / "cdf.csv",
        ("e2e_s", "cumulative_fraction"),
        ((fmt_s(v), f"{(i + 1) / n:.9f}") for i, v in enumerate(e2e)),
    )
    if events:
        _write_csv(
            out / "events.csv",
            ("time_s", "kind", "request", "worker", "peer", "bytes", "end_s"),
            (
                (fmt_s(t), k, rid, wid, peer, nb, fmt_s(end) if end >= 0 else "")
                for t, k, rid, wid, peer, nb, end in report.events
            ),
        )
    s = summary(report, slo)
    (out / "summary.json").write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")
    return s
