"""Data-movement latency between devices and the host."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

from . import constants

NS_PER_S = 1_000_000_000
HOST = "host"

SEQUENTIAL = "sequential"
PRELOAD = "preload"


class LinkError(ValueError):
    pass


def _exact(x) -> Fraction:
    return Fraction(x) if isinstance(x, (int, Fraction)) else Fraction(repr(float(x)))


def _round_ns(seconds: Fraction) -> int:
    x = seconds * NS_PER_S
    return int((2 * x.numerator + x.denominator) // (2 * x.denominator))


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    bandwidth: float
    base_latency: int = 0  # ns
    mode: str = SEQUENTIAL
    buffer_bytes: int = 0
    chunk_bytes: int = 0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise LinkError(f"link {self.src}->{self.dst}: bandwidth must be positive")
        if self.base_latency < 0:
            raise LinkError(f"link {self.src}->{self.dst}: negative latency")
        if self.mode not in (SEQUENTIAL, PRELOAD):
            raise LinkError(f"link {self.src}->{self.dst}: unknown mode {self.mode!r}")
        if self.mode == PRELOAD:
            if self.buffer_bytes <= 0 or self.chunk_bytes <= 0:
                raise LinkError("preload links need positive buffer_bytes and chunk_bytes")
            if self.chunk_bytes > self.buffer_bytes:
                raise LinkError(
                    f"chunk_bytes ({self.chunk_bytes}) exceeds buffer_bytes ({self.buffer_bytes})"
                )


def default_link(src: str, dst: str) -> Link:
    if HOST in (src, dst):
        return Link(src, dst, constants.HOST_LINK_BANDWIDTH, constants.HOST_LINK_LATENCY_NS)
    return Link(src, dst, constants.DEVICE_LINK_BANDWIDTH, constants.DEVICE_LINK_LATENCY_NS)


def transfer_time(link: Link, nbytes: int) -> int:
    """Single-stream latency: ``base_latency + bytes / bandwidth`` in ns."""
    if nbytes < 0:
        raise LinkError("bytes must be >= 0")
    return link.base_latency + _round_ns(Fraction(nbytes) / _exact(link.bandwidth))


class PipelineResult(NamedTuple):
    producer_done: int  # last byte written into the receiver's buffer
    consumer_done: int  # last byte drained by the consumer


def pipelined_transfer(
    link: Link,
    nbytes: int,
    consumer_rate: Optional[float] = None,
    buffer_bytes: Optional[int] = None,
    chunk_bytes: Optional[int] = None,
) -> PipelineResult:
    """Chunked transfer into a bounded receive buffer drained by a consumer.

    Times are relative to the transfer start. A chunk holds buffer space from
    the moment the producer starts writing it until the consumer finishes
    reading it; the producer stalls only while the next chunk does not fit.
    ``consumer_rate=None`` is an infinitely fast consumer.
    """
    buf = buffer_bytes if buffer_bytes is not None else link.buffer_bytes
    chunk = chunk_bytes if chunk_bytes is not None else link.chunk_bytes
    if nbytes < 0:
        raise LinkError("bytes must be >= 0")
    if chunk <= 0 or buf <= 0:
        raise LinkError("pipelined transfer needs positive chunk and buffer sizes")
    if chunk > buf:
        raise LinkError(f"chunk_bytes ({chunk}) exceeds buffer_bytes ({buf})")
    lat = Fraction(link.base_latency, NS_PER_S)
    if nbytes == 0:
        return PipelineResult(link.base_latency, link.base_latency)
    bw = _exact(link.bandwidth)
    cr = None if consumer_rate is None else _exact(consumer_rate)

    sizes = [chunk] * (nbytes // chunk)
    if nbytes % chunk:
        sizes.append(nbytes % chunk)

    p_end = lat
    c_end = lat
    live: list[tuple[Fraction, int]] = []  # (consumer end, size) still in buffer
    occupied = 0
    head = 0
    for s in sizes:
        t = p_end
        # release chunks the consumer has finished by t
        while head < len(live) and live[head][0] <= t:
            occupied -= live[head][1]
            head += 1
        while occupied + s > buf:
            t = max(t, live[head][0])
            occupied -= live[head][1]
            head += 1
        p_end = t + Fraction(s) / bw
        c_start = max(p_end, c_end)
        c_end = c_start if cr is None else c_start + Fraction(s) / cr
        live.append((c_end, s))
        occupied += s
    return PipelineResult(_round_ns(p_end), _round_ns(c_end))


def store_then_load(
    link: Link, nbytes: int, consumer_rate: Optional[float], chunk_bytes: int
) -> PipelineResult:
    """Strictly alternating transfer: each chunk is consumed before the next
    one is sent. Equivalent to a one-chunk buffer."""
    return pipelined_transfer(link, nbytes, consumer_rate, chunk_bytes, chunk_bytes)


class LinkChannel:
    """Runtime FIFO resource for one directed link.

    Transfers serialize in request order; ``reserve`` returns the start and
    completion times of a new transfer.
    """

    def __init__(self, link: Link):
        self.link = link
        self.busy_until = 0
        self.transfers = 0
        self.bytes_moved = 0

    def reserve(self, now: int, nbytes: int) -> tuple[int, int]:
        start = max(now, self.busy_until)
        end = start + transfer_time(self.link, nbytes)
        self.busy_until = end
        self.transfers += 1
        self.bytes_moved += nbytes
        return start, end
