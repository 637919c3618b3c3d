"""Scheduling policies.

Two stages: a global policy picks a worker for each request, and a local
policy on every worker forms the batch of the next iteration and reacts to
breakpoints. Policies are registered by name; the config selects them with
``scheduler.global_policy`` / ``scheduler.local_policy``.

Adding a policy::

    @register_local("my-policy")
    class MyPolicy(ContinuousBatching):
        def form_batch(self, worker): ...

A local policy works through the worker API: ``worker.queue`` (deque, head
first), ``worker.running``, ``worker.pool``, ``worker.try_admit(req, ratio)``,
``worker.prepare_decodes()`` and ``worker.make_batch(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .engine import (
    BLOCKED,
    DECODE,
    DROPPED,
    KEEP_LOCAL,
    PREFILL,
    RETURN_TO_GLOBAL,
    UNIFIED,
    Batch,
    Worker,
)
from .workload import PREFILLING, QUEUED

LOCAL_POLICIES: dict[str, type] = {}
GLOBAL_POLICIES: dict[str, type] = {}


class SchedulerError(ValueError):
    pass


def register_local(name: str):
    def deco(cls):
        cls.name = name
        LOCAL_POLICIES[name] = cls
        return cls

    return deco


def register_global(name: str):
    def deco(cls):
        cls.name = name
        GLOBAL_POLICIES[name] = cls
        return cls

    return deco


@dataclass
class BatchLimits:
    max_batch_size: Optional[int] = None  # None is "inf": memory is the only limit
    max_prefill_tokens: Optional[int] = 4096  # per iteration; None disables
    chunk_size: Optional[int] = None  # prompt tokens per request per iteration
    max_mem_ratio: float = 1.0


class LocalPolicy:
    name = "base"
    # worker roles this policy may run on
    roles: tuple = (UNIFIED,)

    def __init__(self, limits: BatchLimits):
        self.limits = limits

    def form_batch(self, worker: Worker) -> Optional[Batch]:
        raise NotImplementedError

    def wants_breakpoints(self, worker: Worker) -> bool:
        return False

    def on_breakpoint(self, worker: Worker, request, bp) -> str:
        return KEEP_LOCAL

    # shared pieces ----------------------------------------------------------
    def _prefill_take(self, r, used: int) -> int:
        left = r.prompt_len - r.prefill_done
        lim = self.limits
        if lim.chunk_size is None:
            budget = lim.max_prefill_tokens
            if budget is not None and used and used + left > budget:
                return 0
            return left
        take = min(left, lim.chunk_size)
        if lim.max_prefill_tokens is not None:
            take = min(take, lim.max_prefill_tokens - used)
        return max(take, 0)


@register_local("continuous")
class ContinuousBatching(LocalPolicy):
    """Re-form the batch at every iteration boundary.

    Running decodes stay in (unless memory forces a preemption); queued
    requests are admitted FCFS while the admission gate and batch limits
    allow, and their prefills share the iteration with the decodes.
    """

    def form_batch(self, worker):
        lim = self.limits
        decodes, ctx = worker.prepare_decodes()
        prefill = []
        used = 0
        for r in worker.running:
            if r.state == PREFILLING and r.ready:
                take = self._prefill_take(r, used)
                if take:
                    prefill.append((r, take, r.prefill_done, r.prefill_done + take == r.prompt_len))
                    used += take
        cap = lim.max_batch_size
        queue = worker.queue
        cache = worker.cluster.cache
        while queue:
            if cap is not None and len(worker.running) >= cap:
                break
            r = queue[0]
            if r.state == QUEUED:
                left = r.prompt_len
                if cache is not None and r.round_index:
                    hit = cache.peek(r.conversation_id)
                    if hit:
                        left -= min(hit, r.cached_context_len, r.prompt_len - 1)
                if lim.chunk_size is None and lim.max_prefill_tokens is not None:
                    if used and used + left > lim.max_prefill_tokens:
                        break
                elif lim.max_prefill_tokens is not None and used >= lim.max_prefill_tokens:
                    break
            status = worker.try_admit(r, lim.max_mem_ratio)
            if status == BLOCKED:
                break
            queue.popleft()
            if status == DROPPED:
                continue
            if r.state == PREFILLING:
                take = self._prefill_take(r, used)
                if take:
                    prefill.append((r, take, r.prefill_done, r.prefill_done + take == r.prompt_len))
                    used += take
        return worker.make_batch(prefill, decodes, ctx)


@register_local("static")
class StaticBatching(LocalPolicy):
    """Admit a batch only once the previous one has fully drained.

    Membership is frozen while the batch runs; members that finish early
    leave bubbles rather than being replaced.
    """

    def form_batch(self, worker):
        lim = self.limits
        if not worker.running:
            queue = worker.queue
            cap = lim.max_batch_size
            while queue and (cap is None or len(worker.running) < cap):
                status = worker.try_admit(queue[0], lim.max_mem_ratio)
                if status == BLOCKED:
                    break
                queue.popleft()
        decodes, ctx = worker.prepare_decodes()
        prefill = [
            (r, r.prompt_len - r.prefill_done, r.prefill_done, True)
            for r in worker.running
            if r.state == PREFILLING and r.ready
        ]
        return worker.make_batch(prefill, decodes, ctx)


@register_local("disaggregated")
class Disaggregated(ContinuousBatching):
    """Continuous batching on split prefill / decode workers.

    On a prefill worker the end-of-iteration breakpoint hands every request
    that just produced its first token back to the global scheduler, which
    routes it to a decode worker; the decode worker pulls the prompt KV over
    the device link before the first decode step.
    """

    roles = (PREFILL, DECODE)

    def wants_breakpoints(self, worker):
        return worker.role == PREFILL

    def on_breakpoint(self, worker, request, bp):
        if worker.role == PREFILL and bp.at_end and request.generated == 1:
            return RETURN_TO_GLOBAL
        return KEEP_LOCAL


def make_local_policy(name: str, limits: BatchLimits) -> LocalPolicy:
    try:
        return LOCAL_POLICIES[name](limits)
    except KeyError:
        known = ", ".join(sorted(LOCAL_POLICIES))
        raise SchedulerError(f"unknown local policy {name!r} (known: {known})") from None


# -- global policies ----------------------------------------------------------


class GlobalPolicy:
    """``decide`` maps a request and views of the eligible workers to a worker id.

    Views carry ``id``, ``hardware``, ``role``, ``queue_depth``,
    ``outstanding`` and ``utilization``. Policies may keep state on ``self``.
    """

    name = "base"

    def decide(self, request, views) -> int:
        raise NotImplementedError


@register_global("round-robin")
class RoundRobin(GlobalPolicy):
    def __init__(self):
        # one cursor per eligible set, so prefill and decode pools rotate independently
        self.cursors: dict[tuple, int] = {}

    def decide(self, request, views):
        key = tuple(v.id for v in views)
        i = self.cursors.get(key, 0)
        self.cursors[key] = i + 1
        return views[i % len(views)].id


@register_global("least-outstanding")
class LeastOutstanding(GlobalPolicy):
    def decide(self, request, views):
        return min(views, key=lambda v: (v.outstanding, v.id)).id


@register_global("least-memory")
class LeastMemory(GlobalPolicy):
    def decide(self, request, views):
        return min(views, key=lambda v: (v.utilization, v.outstanding, v.id)).id


def make_global_policy(name: str) -> GlobalPolicy:
    try:
        return GLOBAL_POLICIES[name]()
    except KeyError:
        known = ", ".join(sorted(GLOBAL_POLICIES))
        raise SchedulerError(f"unknown global policy {name!r} (known: {known})") from None


def dispatch(policy: GlobalPolicy, request, views) -> int:
    if not views:
        raise SchedulerError("no eligible worker")
    return policy.decide(request, views)
