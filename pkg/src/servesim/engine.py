"""Cluster simulation: workers, global dispatch, KV movement, bookkeeping.

A worker is a kernel process that repeatedly asks its local policy for a
batch, sleeps for the estimated iteration time and then applies the results.
Requests move between workers only through the global scheduler.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import comm
from .costmodel import Aggregates, HardwareSpec, make_cost_model
from .kernel import Signal, Simulator, Timeout
from .memory import BlockPool, MemoryCache, blocks_for, pool_size, select_victim
from .model import ModelSpec, kv_bytes_per_token, weight_bytes
from .workload import (
    DECODING,
    FINISHED,
    PREEMPTED,
    PREFILLING,
    REJECTED,
    Request,
)

UNIFIED = "unified"
PREFILL = "prefill"
DECODE = "decode"
ROLES = (UNIFIED, PREFILL, DECODE)

# breakpoint routing decisions
KEEP_LOCAL = "KeepLocal"
RETURN_TO_GLOBAL = "ReturnToGlobal"

# admission outcomes
ADMITTED = 0
BLOCKED = 1
DROPPED = 2


@dataclass
class MemorySettings:
    block_size: int = 16
    max_mem_ratio: float = 1.0
    reserve_fraction: float = 0.05
    cache_enabled: bool = False
    cache_capacity: Optional[int] = None  # bytes; None = 4x total device KV bytes
    fetch_ns_per_block: int = 800


@dataclass
class WorkerSpec:
    hardware: HardwareSpec
    role: str = UNIFIED


@dataclass
class RunReport:
    requests: list
    footprint: list  # (time_ns, worker_id, allocated_blocks)
    events: list  # (time_ns, kind, request_id, worker_id, peer, nbytes, end_ns)
    workers: list  # dicts: id, hardware, role, total_blocks
    end_time: int
    kv_bytes_per_token: int
    block_size: int
    stats: dict = field(default_factory=dict)


class Batch:
    __slots__ = ("prefill", "decode", "agg", "extra_ns", "start")

    def __init__(self, prefill, decode, agg, extra_ns=0):
        self.prefill = prefill  # [(request, tokens, prefix, emits)]
        self.decode = decode  # [request]
        self.agg = agg
        self.extra_ns = extra_ns
        self.start = 0

    def __len__(self):
        return len(self.prefill) + len(self.decode)


class WorkerView:
    """Read-only snapshot handed to global policies."""

    __slots__ = ("id", "hardware", "role", "queue_depth", "outstanding", "utilization")

    def __init__(self, w: "Worker"):
        self.id = w.id
        self.hardware = w.hw.name
        self.role = w.role
        self.queue_depth = len(w.queue)
        self.outstanding = len(w.queue) + len(w.running)
        self.utilization = w.pool.utilization


class Worker:
    def __init__(self, cluster: "Cluster", wid: int, spec: WorkerSpec, policy):
        self.cluster = cluster
        self.sim: Simulator = cluster.sim
        self.id = wid
        self.name = f"w{wid}"
        self.hw = spec.hardware
        self.role = spec.role
        self.policy = policy
        mem = cluster.memory
        self.pool = BlockPool(
            pool_size(
                self.hw.mem_capacity,
                cluster.weight_bytes,
                cluster.kvpt,
                mem.block_size,
                mem.reserve_fraction,
            ),
            mem.block_size,
            self.name,
        )
        self.cost = make_cost_model(cluster.cost_model, cluster.model, self.hw)
        self.queue: deque[Request] = deque()
        self.running: list[Request] = []
        self.wake: Signal = Signal(self.sim)
        self.idle = True
        self.iterations = 0
        self.busy_ns = 0
        self.mid_breakpoints = [bp for bp in cluster.model.breakpoints if not bp.at_end]
        self._hooks_active = policy.wants_breakpoints(self)
        self._returning: set[int] = set()
        self.process = self.sim.process(self._loop(), self.name)

    # -- plumbing -----------------------------------------------------------
    def enqueue(self, r: Request, front: bool = False) -> None:
        r.worker = self.id
        if front:
            self.queue.appendleft(r)
        else:
            self.queue.append(r)
        self.poke()

    def poke(self) -> None:
        if self.idle:
            self.wake.notify()

    def sample(self) -> None:
        self.cluster.footprint.append((self.sim.now, self.id, self.pool.allocated_blocks))

    def never_fits(self, tokens: int, ratio: float) -> bool:
        need = blocks_for(tokens, self.pool.block_size)
        return need > self.pool.total_blocks or need > ratio * self.pool.total_blocks + 1e-9

    # -- admission ----------------------------------------------------------
    def try_admit(self, r: Request, ratio: float) -> int:
        """Move the queue head onto the device if memory allows.

        Handles the three kinds of queue entries: new prompts, swapped-out
        requests, and prefilled requests whose KV waits on another worker.
        """
        pool = self.pool
        cl = self.cluster
        now = self.sim.now
        if r.state == PREEMPTED:
            need = blocks_for(r.swapped_tokens, pool.block_size)
            if need > pool.total_blocks:
                cl.reject(r, self)
                return DROPPED
            if need > pool.free_blocks:
                return BLOCKED
            pool.register(r.id)
            pool.allocate(r.id, r.swapped_tokens)
            nbytes = need * pool.block_size * cl.kvpt
            start, end = cl.channel("host", self.name).reserve(max(now, r.swap_out_end), nbytes)
            cl.log(start, "swap_in", r.id, self.id, -1, nbytes, end)
            r.state = DECODING
            r.ready = False
            self.sim.schedule_at(end, self._ready, r)
            self.running.append(r)
            return ADMITTED
        if r.prefill_worker >= 0 and r.prefill_worker != self.id:
            # disaggregated: prompt KV lives on the prefill worker
            if self.never_fits(r.prompt_len, ratio):
                cl.reject(r, self)
                return DROPPED
            if not pool.admit(r.prompt_len, ratio):
                return BLOCKED
            pool.register(r.id)
            pool.allocate(r.id, r.prompt_len)
            cl.start_kv_transfer(r, self)
            self.running.append(r)
            return ADMITTED
        if self.never_fits(r.prompt_len, ratio):
            cl.reject(r, self)
            return DROPPED
        if not pool.admit(r.prompt_len, ratio):
            return BLOCKED
        pool.register(r.id)
        pool.allocate(r.id, r.prompt_len)
        r.state = PREFILLING
        r.prefill_done = 0
        r.worker = self.id
        if self.role != DECODE:
            r.prefill_worker = self.id
        cl.log(now, "admit", r.id, self.id, -1, 0, -1)
        if cl.cache is not None and r.round_index > 0:
            hit = cl.cache.lookup(r.conversation_id, r.cached_context_len, now)
            if hit is not None:
                tokens, blocks, delay = hit
                tokens = min(tokens, r.prompt_len - 1)
                r.cache_hit_tokens = tokens
                r.prefill_done = tokens
                r.fetch_delay = delay
                cl.log(now, "cache_hit", r.id, self.id, -1, blocks, delay)
        self.running.append(r)
        return ADMITTED

    def _ready(self, r: Request) -> None:
        r.ready = True
        self.poke()

    # -- per-iteration helpers used by policies -----------------------------
    def prepare_decodes(self) -> tuple[list, int]:
        """Reserve one KV slot for every ready decode, preempting on shortage.

        Returns the surviving decodes and the sum of their cached context.
        """
        pool = self.pool
        tables = pool.tables
        bs = pool.block_size
        dec = [r for r in self.running if r.state == DECODING and r.ready]
        need = 0
        for r in dec:
            if tables[r.id].tokens_used % bs == 0:
                need += 1
        while need > pool.free_blocks:
            victim = select_victim(dec, self.cluster.victim_policy)
            if tables[victim.id].tokens_used % bs == 0:
                need -= 1
            dec.remove(victim)
            if len(pool.tables) == 1:
                # alone on the device and still cannot grow: never completes
                self.cluster.reject(victim, self)
            else:
                self.preempt(victim)
        free = pool._free
        ctx = 0
        for r in dec:
            t = tables[r.id]
            u = t.tokens_used
            ctx += u
            if u % bs == 0:
                t.blocks.append(free.pop())
            t.tokens_used = u + 1
        return dec, ctx

    def preempt(self, r: Request) -> None:
        cl = self.cluster
        pool = self.pool
        tokens = pool.tables[r.id].tokens_used
        nblocks = pool.free(r.id)
        nbytes = nblocks * pool.block_size * cl.kvpt
        start, end = cl.channel(self.name, "host").reserve(self.sim.now, nbytes)
        cl.log(self.sim.now, "preempt", r.id, self.id, -1, nbytes, end)
        r.state = PREEMPTED
        r.preemptions += 1
        r.swapped_tokens = tokens
        r.swap_out_end = end
        self.running.remove(r)
        self.queue.appendleft(r)
        cl.preemptions += 1

    def make_batch(self, prefill: list, decode: list, ctx_sum: int) -> Optional[Batch]:
        if not prefill and not decode:
            return None
        t = r = s = kv = 0
        extra = 0
        for req, p, pre, emits in prefill:
            t += p
            if emits:
                r += 1
            s += p * pre + p * (p + 1) // 2
            kv += pre
            if req.fetch_delay:
                extra = max(extra, req.fetch_delay)
                req.fetch_delay = 0
        d = len(decode)
        agg = Aggregates(t + d, r + d, s + ctx_sum + d, kv + ctx_sum)
        return Batch(prefill, decode, agg, extra)

    # -- main loop ----------------------------------------------------------
    def _loop(self):
        sim = self.sim
        policy = self.policy
        cost = self.cost
        while True:
            batch = policy.form_batch(self)
            if batch is None:
                self.idle = True
                self.sample()
                yield self.wake
                self.idle = False
                continue
            self.idle = False
            batch.start = sim.now
            dt = cost.iteration_ns(batch.agg) + batch.extra_ns
            if self.mid_breakpoints:
                offsets = cost.operator_offsets(batch.agg)
                for bp in self.mid_breakpoints:
                    sim.schedule(batch.extra_ns + offsets[bp.position], self._mid_breakpoint, batch, bp)
            self.iterations += 1
            self.busy_ns += dt
            yield Timeout(dt)
            self._complete(batch)

    def _mid_breakpoint(self, batch: Batch, bp) -> None:
        # routing decisions taken mid-iteration apply once the iteration ends
        cl = self.cluster
        members = [r for r, *_ in batch.prefill] + list(batch.decode)
        for r in members:
            cl.log(self.sim.now, "breakpoint", r.id, self.id, bp.position, 0, -1)
            if self.policy.on_breakpoint(self, r, bp) == RETURN_TO_GLOBAL:
                self._returning.add(r.id)

    def _complete(self, batch: Batch) -> None:
        now = self.sim.now
        cl = self.cluster
        emitted = []
        done = False
        for r, p, pre, emits in batch.prefill:
            r.prefill_done = pre + p
            if emits:
                r.token_times.append(now)
                r.breakpoints += 1
                r.state = DECODING
                cl.log(now, "prefill_done", r.id, self.id, -1, 0, -1)
                emitted.append(r)
                if r.output_len == 1:
                    cl.finish(r, self)
                    done = True
        start = batch.start
        for r in batch.decode:
            tt = r.token_times
            gap = now - tt[-1]
            if gap > r.max_gap:
                r.max_gap = gap
            if len(tt) == 1:
                cl.log(start, "decode_start", r.id, self.id, -1, 0, -1)
            tt.append(now)
            r.breakpoints += 1
            if len(tt) == r.output_len:
                cl.finish(r, self)
                done = True
        if self._hooks_active or self._returning:
            policy = self.policy
            end_bp = cl.end_breakpoint
            returning = self._returning
            leaving = []
            for r in emitted + batch.decode:
                if r.state != DECODING:
                    continue
                if r.id in returning or (
                    self._hooks_active and policy.on_breakpoint(self, r, end_bp) == RETURN_TO_GLOBAL
                ):
                    leaving.append(r)
            returning.clear()
            for r in leaving:
                self.running.remove(r)
                cl.return_to_global(r, self)
        if done:
            self.running = [r for r in self.running if r.state != FINISHED and r.state != REJECTED]
        if cl.debug:
            self.pool.check()
        self.sample()


class Cluster:
    def __init__(
        self,
        model: ModelSpec,
        workers: list[WorkerSpec],
        requests: list[Request],
        local_policy_factory,
        global_policy,
        memory: MemorySettings = MemorySettings(),
        links: Optional[dict] = None,
        cost_model: str = "roofline",
        victim_policy: str = "latest-arrival",
        debug: bool = False,
    ):
        self.sim = Simulator(advance_to_horizon=False)
        self.model = model
        self.memory = memory
        self.kvpt = kv_bytes_per_token(model)
        self.weight_bytes = weight_bytes(model)
        self.cost_model = cost_model
        self.victim_policy = victim_policy
        self.end_breakpoint = next(bp for bp in model.breakpoints if bp.at_end)
        self.requests = requests
        self.footprint: list = []
        self.events: list = []
        self.preemptions = 0
        self.global_queue: deque[Request] = deque()
        self.global_policy = global_policy
        self.debug = debug
        self._link_specs = dict(links or {})
        self._channels: dict[tuple[str, str], comm.LinkChannel] = {}
        self.workers = [
            Worker(self, i, spec, local_policy_factory(spec)) for i, spec in enumerate(workers)
        ]
        self.cache: Optional[MemoryCache] = None
        if memory.cache_enabled:
            block_bytes = memory.block_size * self.kvpt
            cap = memory.cache_capacity
            if cap is None:
                cap = 4 * sum(w.pool.total_blocks for w in self.workers) * block_bytes
            self.cache = MemoryCache(cap, block_bytes, memory.block_size, memory.fetch_ns_per_block)
        for r in requests:
            if r.round_index == 0:
                self.sim.schedule_at(r.arrival_time, self.arrive, r)

    # -- links --------------------------------------------------------------
    def channel(self, src: str, dst: str) -> comm.LinkChannel:
        key = (src, dst)
        ch = self._channels.get(key)
        if ch is None:
            link = self._link_specs.get(key) or comm.default_link(src, dst)
            ch = self._channels[key] = comm.LinkChannel(link)
        return ch

    # -- bookkeeping ----------------------------------------------------------
    def log(self, t, kind, rid, wid, peer, nbytes, end) -> None:
        self.events.append((t, kind, rid, wid, peer, nbytes, end))

    def arrive(self, r: Request) -> None:
        if r.arrival_time is None:
            r.arrival_time = self.sim.now
        self.log(self.sim.now, "arrive", r.id, -1, -1, 0, -1)
        self.dispatch(r, (UNIFIED, PREFILL))

    def dispatch(self, r: Request, roles: tuple) -> None:
        eligible = [w for w in self.workers if w.role in roles]
        if not eligible:
            self.global_queue.append(r)
            return
        wid = self.global_policy.decide(r, [WorkerView(w) for w in eligible])
        self.log(self.sim.now, "dispatch", r.id, wid, -1, 0, -1)
        self.workers[wid].enqueue(r)

    def return_to_global(self, r: Request, src: Worker) -> None:
        self.log(self.sim.now, "return_to_global", r.id, src.id, -1, 0, -1)
        self.dispatch(r, (DECODE,))

    def start_kv_transfer(self, r: Request, dst: Worker) -> None:
        src = self.workers[r.prefill_worker]
        nbytes = r.prompt_len * self.kvpt
        start, end = self.channel(src.name, dst.name).reserve(self.sim.now, nbytes)
        self.log(start, "kv_transfer", r.id, dst.id, src.id, nbytes, end)
        r.decode_worker = dst.id
        r.ready = False
        self.sim.schedule_at(end, self._kv_arrived, r, src, dst)

    def _kv_arrived(self, r: Request, src: Worker, dst: Worker) -> None:
        src.pool.free(r.id)
        src.sample()
        r.ready = True
        dst.poke()
        src.poke()

    def finish(self, r: Request, w: Worker) -> None:
        now = self.sim.now
        r.state = FINISHED
        r.finish_time = now
        pool = w.pool
        kv_tokens = pool.tables[r.id].tokens_used
        pool.free(r.id)
        self.log(now, "finish", r.id, w.id, -1, 0, -1)
        if self.cache is not None:
            self.cache.store(r.conversation_id, kv_tokens, now)
        nxt = r.next_round
        if nxt is not None:
            nxt.arrival_time = now + nxt.think_time
            self.sim.schedule(nxt.think_time, self.arrive, nxt)

    def reject(self, r: Request, w: Worker) -> None:
        if r.id in w.pool.tables:
            w.pool.free(r.id)
        if r in w.running:
            w.running.remove(r)
        r.state = REJECTED
        self.log(self.sim.now, "reject", r.id, w.id, -1, 0, -1)

    # -- run ------------------------------------------------------------------
    def run(self, horizon: Optional[int] = None) -> RunReport:
        self.sim.run_until(horizon)
        end = self.sim.now
        if self.debug:
            for w in self.workers:
                w.pool.check()
        return RunReport(
            requests=self.requests,
            footprint=self.footprint,
            events=self.events,
            workers=[
                dict(
                    id=w.id,
                    hardware=w.hw.name,
                    role=w.role,
                    total_blocks=w.pool.total_blocks,
                    iterations=w.iterations,
                    busy_ns=w.busy_ns,
                )
                for w in self.workers
            ],
            end_time=end,
            kv_bytes_per_token=self.kvpt,
            block_size=self.memory.block_size,
            stats=dict(
                preemptions=self.preemptions,
                cache_hits=self.cache.hits if self.cache else 0,
                cache_evictions=self.cache.evictions if self.cache else 0,
                events_dispatched=self.sim.dispatched,
            ),
        )
