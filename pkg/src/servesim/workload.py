"""Request streams: synthetic distributions, trace replay, multi-round chats.

Randomness comes from numpy's PCG64. One root seed feeds a
``SeedSequence(seed, spawn_key=(stream,))`` per stream, so each quantity
(arrivals, prompt lengths, ...) has its own substream and adding a new stream
never shifts the draws of an existing one.
"""

from __future__ import annotations

import csv
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

NS_PER_S = 1_000_000_000

# Substream offsets. Append only.
ARRIVALS, PROMPT, OUTPUT, ROUNDS, THINK, TRACE, TURN_PROMPT, TURN_OUTPUT = range(8)

QUEUED = "Queued"
PREFILLING = "Prefilling"
DECODING = "Decoding"
PREEMPTED = "Preempted"
FINISHED = "Finished"
REJECTED = "Rejected"


class WorkloadError(ValueError):
    pass


def substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,)))
    )


@dataclass
class Dist:
    """Length / count distribution.

    kind is one of ``fixed`` (value), ``poisson`` (mean), ``uniform`` (lo, hi
    inclusive), ``empirical`` (from the trace file) or, for round counts only,
    ``chat-mix`` (1 round with probability 0.5, else uniform over 2..7).
    """

    kind: str = "fixed"
    value: int = 1
    mean: float = 1.0
    lo: int = 1
    hi: int = 1

    KINDS = ("fixed", "poisson", "uniform", "empirical", "chat-mix")

    def validate(self, where: str = "") -> None:
        if self.kind not in self.KINDS:
            raise WorkloadError(f"{where}: unknown distribution kind {self.kind!r}")
        if self.kind == "fixed" and self.value < 1:
            raise WorkloadError(f"{where}: value must be >= 1")
        if self.kind == "poisson" and not self.mean > 0:
            raise WorkloadError(f"{where}: mean must be > 0")
        if self.kind == "uniform" and not 1 <= self.lo <= self.hi:
            raise WorkloadError(f"{where}: need 1 <= lo <= hi")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = self.kind
        if k == "fixed":
            return np.full(n, self.value, dtype=np.int64)
        if k == "poisson":
            return np.maximum(rng.poisson(self.mean, n), 1).astype(np.int64)
        if k == "uniform":
            return rng.integers(self.lo, self.hi + 1, n, dtype=np.int64)
        if k == "chat-mix":
            multi = rng.random(n) >= 0.5
            extra = rng.integers(2, 8, n, dtype=np.int64)
            return np.where(multi, extra, 1).astype(np.int64)
        raise WorkloadError(f"cannot sample {k!r} without a trace")


def fixed(n: int) -> Dist:
    return Dist("fixed", value=n)


@dataclass
class WorkloadSpec:
    source: str = "synthetic"  # "synthetic" | "trace"
    trace_path: Optional[str] = None
    trace_sampling: str = "uniform"  # "uniform" (with replacement) | "sequential"
    qps: float = 1.0
    # number of conversations; every conversation contributes one request per round
    num_requests: int = 100
    prompt_len: Dist = field(default_factory=lambda: fixed(128))
    output_len: Dist = field(default_factory=lambda: fixed(128))
    rounds: Dist = field(default_factory=lambda: fixed(1))
    turn_prompt_len: Optional[Dist] = None  # new-turn prompt of rounds >= 2
    think_time: float = 5.0  # mean seconds between a round finishing and the next

    def validate(self) -> None:
        if self.source not in ("synthetic", "trace"):
            raise WorkloadError(f"workload.source: unknown source {self.source!r}")
        if self.source == "trace" and not self.trace_path:
            raise WorkloadError("workload.trace_path is required for trace replay")
        if self.trace_sampling not in ("uniform", "sequential"):
            raise WorkloadError(f"workload.trace_sampling: {self.trace_sampling!r}")
        if not self.qps > 0:
            raise WorkloadError("workload.qps must be positive")
        if self.num_requests < 1:
            raise WorkloadError("workload.num_requests must be >= 1")
        if not self.think_time > 0:
            raise WorkloadError("workload.think_time must be positive")
        for name in ("prompt_len", "output_len", "rounds", "turn_prompt_len"):
            d = getattr(self, name)
            if d is None:
                continue
            d.validate(f"workload.{name}")
            if d.kind == "empirical" and self.source != "trace":
                raise WorkloadError(f"workload.{name}: empirical needs a trace source")
            if d.kind == "chat-mix" and name != "rounds":
                raise WorkloadError(f"workload.{name}: chat-mix is only for rounds")


@dataclass(slots=True, eq=False)
class Request:
    id: int
    conversation_id: int
    round_index: int
    arrival_time: Optional[int]  # ns; None until a follow-up round is released
    prompt_len: int
    output_len: int
    cached_context_len: int = 0
    think_time: int = 0  # ns after the previous round finishes
    next_round: Optional["Request"] = None
    state: str = QUEUED
    token_times: array = field(default_factory=lambda: array("q"))
    # runtime bookkeeping
    prefill_done: int = 0  # prompt tokens whose KV exists
    cache_hit_tokens: int = 0
    fetch_delay: int = 0
    preemptions: int = 0
    breakpoints: int = 0
    prefill_worker: int = -1
    decode_worker: int = -1
    worker: int = -1
    ready: bool = True
    swapped_tokens: int = 0
    swap_out_end: int = 0
    max_gap: int = 0
    finish_time: int = -1

    @property
    def generated(self) -> int:
        return len(self.token_times)


def load_trace(path: Union[str, Path]) -> list[tuple[int, int]]:
    """Read ``prompt_len,output_len`` rows. A non-numeric first row is a header."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise WorkloadError(f"cannot read trace {p}: {e}") from None
    rows: list[tuple[int, int]] = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise WorkloadError(f"{p}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            a, b = int(row[0]), int(row[1])
        except ValueError:
            if lineno == 1 and not rows:
                continue  # header
            raise WorkloadError(f"{p}:{lineno}: non-integer field in {row!r}") from None
        if a < 1 or b < 1:
            raise WorkloadError(f"{p}:{lineno}: lengths must be >= 1, got {a},{b}")
        rows.append((a, b))
    if not rows:
        raise WorkloadError(f"{p}: trace has no records")
    return rows


def _ns(seconds: np.ndarray) -> np.ndarray:
    return np.floor(seconds * NS_PER_S + 0.5).astype(np.int64)


def generate(spec: WorkloadSpec, seed: int = 0) -> list[Request]:
    """Build the request stream.

    First rounds are returned in arrival order. Follow-up rounds follow their
    conversation's first round in the list with ``arrival_time=None``; the
    simulator releases them ``think_time`` after the previous round finishes.
    """
    spec.validate()
    n = spec.num_requests
    gaps = substream(seed, ARRIVALS).exponential(1.0 / spec.qps, n)
    arrivals = np.cumsum(_ns(gaps))

    trace = load_trace(spec.trace_path) if spec.source == "trace" else None

    def lengths(dist: Dist, stream: int, count: int, column: int) -> np.ndarray:
        if dist.kind != "empirical":
            return dist.sample(substream(seed, stream), count)
        idx = _trace_index(trace, spec.trace_sampling, seed, stream, count)
        return np.fromiter((trace[i][column] for i in idx), np.int64, count)

    if trace is not None and spec.prompt_len.kind == spec.output_len.kind == "empirical":
        # keep (prompt, output) pairs together
        idx = _trace_index(trace, spec.trace_sampling, seed, TRACE, n)
        prompts = np.fromiter((trace[i][0] for i in idx), np.int64, n)
        outputs = np.fromiter((trace[i][1] for i in idx), np.int64, n)
    else:
        prompts = lengths(spec.prompt_len, PROMPT, n, 0)
        outputs = lengths(spec.output_len, OUTPUT, n, 1)
    rounds = spec.rounds.sample(substream(seed, ROUNDS), n)

    extra = int(rounds.sum()) - n
    turn_dist = spec.turn_prompt_len or spec.prompt_len
    turn_prompts = lengths(turn_dist, TURN_PROMPT, extra, 0) if extra else []
    turn_outputs = lengths(spec.output_len, TURN_OUTPUT, extra, 1) if extra else []
    thinks = _ns(substream(seed, THINK).exponential(spec.think_time, extra)) if extra else []

    out: list[Request] = []
    rid = 0
    k = 0
    for conv in range(n):
        first = Request(
            rid, conv, 0, int(arrivals[conv]), int(prompts[conv]), int(outputs[conv])
        )
        out.append(first)
        rid += 1
        prev = first
        for r in range(1, int(rounds[conv])):
            context = prev.prompt_len + prev.output_len
            req = Request(
                rid,
                conv,
                r,
                None,
                context + int(turn_prompts[k]),
                int(turn_outputs[k]),
                cached_context_len=context,
                think_time=max(int(thinks[k]), 1),
            )
            prev.next_round = req
            out.append(req)
            prev = req
            rid += 1
            k += 1
    return out


def _trace_index(trace, sampling: str, seed: int, stream: int, count: int):
    if sampling == "sequential":
        return [i % len(trace) for i in range(count)]
    return substream(seed, stream).integers(0, len(trace), count)


def first_rounds(requests: list[Request]) -> list[Request]:
    return [r for r in requests if r.round_index == 0]
