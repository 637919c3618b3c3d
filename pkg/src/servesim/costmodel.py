"""Analytical roofline estimate of one batched decoder iteration.

Each operator costs ``max(flops / flop_rate, bytes / byte_rate)`` and the
iteration costs the sum over operators. Rates are held as exact rationals and
the sum is rounded half-up to whole nanoseconds once, so the result does not
depend on float evaluation order. The FLOP/byte table lives in
:func:`operator_cost` and is reproduced in COSTMODEL.md.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

from . import constants
from .model import ModelSpec, OperatorSpec

NS_PER_S = 1_000_000_000

COMPUTE_BOUND = "ComputeBound"
MEMORY_BOUND = "MemoryBound"
MIXED = "Mixed"

# Share of operator time that must be compute-limited (or memory-limited)
# before a plan is classified as such; anything in between is Mixed.
CLASSIFY_THRESHOLD = Fraction(2, 3)


class CostModelError(ValueError):
    pass


def _exact(x) -> Fraction:
    # repr() keeps decimal literals like 0.6 as 3/5 instead of the binary
    # expansion.
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class HardwareSpec:
    name: str
    peak_flops: float
    mem_bandwidth: float
    mem_capacity: float
    efficiency_flops: float = 0.6
    efficiency_bw: float = 0.8
    iteration_overhead_ns: int = 200_000

    def __post_init__(self):
        for f in ("peak_flops", "mem_bandwidth", "mem_capacity"):
            if not getattr(self, f) > 0:
                raise CostModelError(f"{f} must be positive")
        for f in ("efficiency_flops", "efficiency_bw"):
            if not 0 < getattr(self, f) <= 1:
                raise CostModelError(f"{f} must be in (0, 1]")
        if self.iteration_overhead_ns < 0:
            raise CostModelError("iteration_overhead_ns must be >= 0")

    @property
    def flop_rate(self) -> Fraction:
        return _exact(self.peak_flops) * _exact(self.efficiency_flops)

    @property
    def byte_rate(self) -> Fraction:
        return _exact(self.mem_bandwidth) * _exact(self.efficiency_bw)

    def replace(self, **changes) -> "HardwareSpec":
        return dataclasses.replace(self, **changes)


def builtin_hardware(name: str, **overrides) -> HardwareSpec:
    try:
        base = constants.HARDWARE[name]
    except KeyError:
        known = ", ".join(sorted(constants.HARDWARE))
        raise CostModelError(f"unknown hardware {name!r} (known: {known})") from None
    return HardwareSpec(name=name, **{**base, **overrides})


class PrefillEntry(NamedTuple):
    request_id: int
    tokens: int  # new prompt tokens processed this iteration
    prefix: int = 0  # tokens already in the KV cache (cache hit or earlier chunk)
    emits: bool = True  # whether this chunk finishes the prompt


class DecodeEntry(NamedTuple):
    request_id: int
    context: int  # tokens already in the KV cache before this step


@dataclass(frozen=True)
class BatchPlan:
    prefill: tuple[PrefillEntry, ...] = ()
    decode: tuple[DecodeEntry, ...] = ()

    def __post_init__(self):
        seen = set()
        for e in self.prefill:
            if e.tokens < 1 or e.prefix < 0:
                raise CostModelError(f"bad prefill entry {e}")
            seen.add(e.request_id)
        for e in self.decode:
            if e.context < 1:
                raise CostModelError(f"bad decode entry {e}")
            seen.add(e.request_id)
        if len(seen) != len(self.prefill) + len(self.decode):
            raise CostModelError("a request appears more than once in the plan")

    def __len__(self) -> int:
        return len(self.prefill) + len(self.decode)

    @property
    def is_empty(self) -> bool:
        return not self.prefill and not self.decode


class Aggregates(NamedTuple):
    """Plan summary the cost table depends on.

    new_tokens: tokens whose activations flow through the matmuls.
    emit_rows: sequences producing a token (LM head rows).
    attn_pairs: causal (query, key) pairs scored by attention.
    kv_read: cached tokens whose K/V are read.
    """

    new_tokens: int
    emit_rows: int
    attn_pairs: int
    kv_read: int


def aggregate(plan: BatchPlan) -> Aggregates:
    t = r = s = kv = 0
    for e in plan.prefill:
        p, pre = e.tokens, e.prefix
        t += p
        r += 1 if e.emits else 0
        s += p * pre + p * (p + 1) // 2
        kv += pre
    for e in plan.decode:
        t += 1
        r += 1
        s += e.context + 1
        kv += e.context
    return Aggregates(t, r, s, kv)


def operator_cost(op: OperatorSpec, m: ModelSpec, agg: Aggregates) -> tuple[int, int]:
    """FLOPs and bytes of one instance of ``op`` (a single layer if per-layer).

    Bytes are weights (read once per iteration, shared by every entry) plus,
    for attention, the K/V of cached context read and of new tokens written.
    Activations are assumed to stay on chip.
    """
    T, R, S, K = agg
    b = m.dtype_bytes
    h, q, kv, f = m.hidden_dim, m.q_dim, m.kv_dim, m.ffn_dim
    kind = op.kind
    if kind == "QKVProj":
        w = h * (q + 2 * kv)
        return 2 * T * w, b * w
    if kind == "AttnScore":
        # QK^T and PV: 2 FLOPs per multiply-add, head_dim wide, per head.
        flops = 4 * m.num_heads * m.head_dim * S
        return flops, b * 2 * kv * (K + T)
    if kind == "AttnOutProj":
        return 2 * T * q * h, b * q * h
    if kind == "MLPUp":
        g = 2 if m.gated_mlp else 1
        return 2 * T * h * f * g, b * g * h * f
    if kind == "MLPDown":
        return 2 * T * f * h, b * f * h
    if kind == "LMHead":
        if R == 0:
            return 0, 0
        v = m.vocab_size
        return 2 * R * h * v, b * v * h
    if kind == "Custom":
        return op.flops_per_token * T, op.weight_bytes + op.bytes_per_token * T
    raise CostModelError(f"no cost formula for {kind!r}")


class RooflineCostModel:
    """Per-operator roofline over a fixed (model, hardware) pair."""

    name = "roofline"

    def __init__(self, model: ModelSpec, hw: HardwareSpec):
        self.model = model
        self.hw = hw
        rf, rb = hw.flop_rate, hw.byte_rate
        # flops/rf vs bytes/rb, cross-multiplied onto the denominator rf*rb
        self._cf = rf.denominator * rb.numerator
        self._cb = rb.denominator * rf.numerator
        self._den = rf.numerator * rb.numerator
        self._ops = [
            (op, model.num_layers if op.per_layer else 1) for op in model.operators
        ]
        self.overhead_ns = hw.iteration_overhead_ns
        self._linear = self._linearize()

    def _linearize(self) -> list[tuple[int, ...]]:
        """Scaled integer coefficients of each operator's time terms.

        Every table entry is affine in (T, R, S, K) once R >= 1, so costs are
        read off five probe points. Used by the hot path; the table itself
        stays the reference (see ``_terms``).
        """
        probes = [Aggregates(0, 1, 0, 0)] + [
            Aggregates(*(int(i == j) + (j == 1) for j in range(4))) for i in range(4)
        ]
        out = []
        for op, mult in self._ops:
            vals = [operator_cost(op, self.model, p) for p in probes]
            coef = []
            for k, scale in ((0, self._cf), (1, self._cb)):
                base = vals[0][k]
                slopes = [v[k] - base for v in vals[1:]]
                const = base - slopes[1]  # the probes sit at R = 1
                coef.extend(c * mult * scale for c in [const] + slopes)
            out.append(tuple(coef))
        return out

    def _fast_total(self, agg: Aggregates) -> int:
        T, R, S, K = agg
        tot = 0
        for a0, aT, aR, aS, aK, b0, bT, bR, bS, bK in self._linear:
            x = a0 + aT * T + aR * R + aS * S + aK * K
            y = b0 + bT * T + bR * R + bS * S + bK * K
            tot += x if x >= y else y
        return tot

    def breakdown(self, agg: Aggregates) -> list[tuple[OperatorSpec, int, int]]:
        """Total (flops, bytes) per operator, layers folded in."""
        out = []
        for op, mult in self._ops:
            fl, by = operator_cost(op, self.model, agg)
            out.append((op, fl * mult, by * mult))
        return out

    def _terms(self, agg: Aggregates) -> list[tuple[int, bool]]:
        """Per-operator scaled time numerator and whether compute wins."""
        cf, cb = self._cf, self._cb
        out = []
        for op, fl, by in self.breakdown(agg):
            a, c = fl * cf, by * cb
            out.append((a, True) if a >= c else (c, False))
        return out

    def _round(self, num: int) -> int:
        num *= NS_PER_S
        den = self._den
        return (2 * num + den) // (2 * den)

    def compute_ns(self, agg: Aggregates) -> int:
        """Operator time without the fixed overhead."""
        if agg.emit_rows > 0:
            return self._round(self._fast_total(agg))
        return self._round(sum(t for t, _ in self._terms(agg)))

    def iteration_ns(self, agg: Aggregates) -> int:
        return self.compute_ns(agg) + self.overhead_ns

    def iteration_time(self, plan: BatchPlan) -> int:
        if plan.is_empty:
            raise CostModelError("iteration_time of an empty plan")
        return self.iteration_ns(aggregate(plan))

    def operator_offsets(self, agg: Aggregates) -> list[int]:
        """Elapsed ns at the end of each operator (overhead charged up front)."""
        acc = 0
        out = []
        for t, _ in self._terms(agg):
            acc += t
            out.append(self.overhead_ns + self._round(acc))
        return out

    def classify(self, plan: BatchPlan) -> str:
        if plan.is_empty:
            raise CostModelError("cannot classify an empty plan")
        terms = self._terms(aggregate(plan))
        total = sum(t for t, _ in terms)
        compute = sum(t for t, is_c in terms if is_c)
        share = Fraction(compute, total) if total else Fraction(0)
        if share >= CLASSIFY_THRESHOLD:
            return COMPUTE_BOUND
        if share <= 1 - CLASSIFY_THRESHOLD:
            return MEMORY_BOUND
        return MIXED

    def totals(self, plan: BatchPlan) -> tuple[int, int]:
        rows = self.breakdown(aggregate(plan))
        return sum(r[1] for r in rows), sum(r[2] for r in rows)


COST_MODELS = {"roofline": RooflineCostModel}


def make_cost_model(name: str, model: ModelSpec, hw: HardwareSpec):
    try:
        cls = COST_MODELS[name]
    except KeyError:
        raise CostModelError(f"unknown cost model {name!r}") from None
    return cls(model, hw)


def iteration_time(
    plan: BatchPlan, m: ModelSpec, hw: HardwareSpec, cost_model: Optional[str] = None
) -> int:
    return make_cost_model(cost_model or "roofline", m, hw).iteration_time(plan)


def phase_classification(plan: BatchPlan, m: ModelSpec, hw: HardwareSpec) -> str:
    return RooflineCostModel(m, hw).classify(plan)


def plan_from(prefill: Sequence = (), decode: Sequence = ()) -> BatchPlan:
    """Convenience: build a plan from bare tuples."""
    return BatchPlan(
        tuple(PrefillEntry(*e) for e in prefill),
        tuple(DecodeEntry(*e) for e in decode),
    )
