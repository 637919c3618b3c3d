"""Deterministic discrete-event kernel.

Time is an integer count of nanoseconds. Events are ordered by
``(fire_at, seq)`` where ``seq`` is a global insertion counter, so two events
due at the same instant fire in the order they were scheduled.

Processes are plain generators. A process yields one of

* :class:`Timeout` -- resume after a delay,
* :class:`Signal` -- resume at the next ``notify()``,
* a :class:`Store` ``get()`` request -- resume when an item is available,
* a :class:`Resource` ``request()`` -- resume once a slot is granted.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Any, Callable, Generator, Optional

__all__ = [
    "NS_PER_S",
    "SimulationError",
    "Simulator",
    "Timeout",
    "Signal",
    "Store",
    "Resource",
    "Process",
    "to_ns",
]

NS_PER_S = 1_000_000_000


class SimulationError(RuntimeError):
    pass


def to_ns(seconds) -> int:
    """Round a duration in seconds to whole nanoseconds, half-up.

    This is the single quantization point between float-valued inputs and the
    integer clock.
    """
    if isinstance(seconds, int):
        return seconds * NS_PER_S
    from fractions import Fraction

    x = Fraction(seconds) * NS_PER_S
    return int((2 * x.numerator + x.denominator) // (2 * x.denominator))


# Event entries are lists so they can be cancelled in place:
# [fire_at, seq, action, args, alive]
_FIRE, _SEQ, _ACTION, _ARGS, _ALIVE = range(5)


class Timeout:
    __slots__ = ("delay",)

    def __init__(self, delay: int):
        if delay < 0:
            raise SimulationError(f"negative delay {delay}")
        self.delay = delay


class Process:
    __slots__ = ("sim", "gen", "name", "finished", "value")

    def __init__(self, sim: "Simulator", gen: Generator, name: str = ""):
        self.sim = sim
        self.gen = gen
        self.name = name
        self.finished = False
        self.value = None

    def _resume(self, value: Any = None) -> None:
        try:
            target = self.gen.send(value)
        except StopIteration as stop:
            self.finished = True
            self.value = stop.value
            return
        sim = self.sim
        if type(target) is Timeout:
            sim.schedule(target.delay, self._resume)
        elif isinstance(target, _Waitable):
            target._add_waiter(self)
        else:
            raise SimulationError(f"process {self.name!r} yielded {target!r}")


class _Waitable:
    def _add_waiter(self, proc: Process) -> None:  # pragma: no cover
        raise NotImplementedError


class Signal(_Waitable):
    """Edge-triggered wake-up: ``notify`` resumes every current waiter."""

    __slots__ = ("sim", "_waiters")

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self._waiters: list[Process] = []

    def _add_waiter(self, proc: Process) -> None:
        self._waiters.append(proc)

    @property
    def has_waiters(self) -> bool:
        return bool(self._waiters)

    def notify(self, value: Any = None) -> int:
        waiters, self._waiters = self._waiters, []
        for proc in waiters:
            self.sim.schedule(0, proc._resume, value)
        return len(waiters)


class _Get(_Waitable):
    __slots__ = ("store",)

    def __init__(self, store: "Store"):
        self.store = store

    def _add_waiter(self, proc: Process) -> None:
        store = self.store
        if store.items:
            store.sim.schedule(0, proc._resume, store.items.popleft())
        else:
            store._getters.append(proc)


class Store:
    """Unbounded FIFO queue; ``get()`` blocks while empty."""

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.items: deque = deque()
        self._getters: deque[Process] = deque()

    def __len__(self) -> int:
        return len(self.items)

    def put(self, item: Any) -> None:
        if self._getters:
            self.sim.schedule(0, self._getters.popleft()._resume, item)
        else:
            self.items.append(item)

    def get(self) -> _Get:
        return _Get(self)


class _Request(_Waitable):
    __slots__ = ("resource",)

    def __init__(self, resource: "Resource"):
        self.resource = resource

    def _add_waiter(self, proc: Process) -> None:
        res = self.resource
        if res.in_use < res.capacity:
            res.in_use += 1
            res.sim.schedule(0, proc._resume, None)
        else:
            res._queue.append(proc)


class Resource:
    """Counted resource with FIFO granting."""

    def __init__(self, sim: "Simulator", capacity: int = 1):
        if capacity < 1:
            raise SimulationError("resource capacity must be >= 1")
        self.sim = sim
        self.capacity = capacity
        self.in_use = 0
        self._queue: deque[Process] = deque()

    def request(self) -> _Request:
        return _Request(self)

    def release(self) -> None:
        if self.in_use <= 0:
            raise SimulationError("release without matching request")
        if self._queue:
            self.sim.schedule(0, self._queue.popleft()._resume, None)
        else:
            self.in_use -= 1


class Simulator:
    """Single-threaded event loop over an integer-nanosecond clock.

    ``advance_to_horizon`` controls what ``run_until`` leaves in ``now`` when
    the queue runs dry before the horizon: the horizon itself (default) or the
    time of the last dispatched event.
    """

    def __init__(self, advance_to_horizon: bool = True):
        self.now = 0
        self.advance_to_horizon = advance_to_horizon
        self._heap: list[list] = []
        self._seq = 0
        self.scheduled = 0
        self.dispatched = 0
        self.cancelled = 0

    # -- scheduling ---------------------------------------------------------
    def schedule(self, delay: int, action: Callable, *args: Any) -> list:
        """Queue ``action(*args)`` to fire ``delay`` ns from now.

        Returns a handle accepted by :meth:`cancel`.
        """
        if delay < 0:
            raise SimulationError(f"cannot schedule with negative delay {delay}")
        entry = [self.now + delay, self._seq, action, args, True]
        self._seq += 1
        self.scheduled += 1
        heapq.heappush(self._heap, entry)
        return entry

    def schedule_at(self, when: int, action: Callable, *args: Any) -> list:
        return self.schedule(when - self.now, action, *args)

    def cancel(self, handle: list) -> bool:
        if not handle[_ALIVE]:
            return False
        handle[_ALIVE] = False
        self.cancelled += 1
        return True

    @property
    def pending(self) -> int:
        return sum(1 for e in self._heap if e[_ALIVE])

    def peek(self) -> Optional[int]:
        heap = self._heap
        while heap and not heap[0][_ALIVE]:
            heapq.heappop(heap)
        return heap[0][_FIRE] if heap else None

    # -- processes ----------------------------------------------------------
    def timeout(self, delay: int) -> Timeout:
        return Timeout(delay)

    def signal(self) -> Signal:
        return Signal(self)

    def process(self, gen: Generator, name: str = "") -> Process:
        proc = Process(self, gen, name)
        self.schedule(0, proc._resume, None)
        return proc

    # -- running ------------------------------------------------------------
    def run_until(self, horizon: Optional[int] = None) -> int:
        """Dispatch every event with ``fire_at <= horizon`` in total order.

        With ``horizon=None`` the loop runs until the queue is empty.
        """
        if horizon is not None and horizon < self.now:
            raise SimulationError(f"horizon {horizon} is before now {self.now}")
        heap = self._heap
        pop = heapq.heappop
        dispatched = 0
        while heap:
            entry = heap[0]
            if horizon is not None and entry[_FIRE] > horizon:
                break
            pop(heap)
            if not entry[_ALIVE]:
                continue
            entry[_ALIVE] = False
            self.now = entry[_FIRE]
            dispatched += 1
            entry[_ACTION](*entry[_ARGS])
        self.dispatched += dispatched
        if horizon is not None and self.advance_to_horizon:
            self.now = horizon
        return self.now

    def run(self) -> int:
        return self.run_until(None)
