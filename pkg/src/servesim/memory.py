"""Block-granularity KV-cache management and the host-side memory cache."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional

DEFAULT_BLOCK_SIZE = 16
DEFAULT_FETCH_NS_PER_BLOCK = 800


class BlockError(RuntimeError):
    """Bookkeeping misuse: unknown request, double registration, etc."""


def blocks_for(tokens: int, block_size: int) -> int:
    return -(-tokens // block_size)


def pool_size(
    mem_capacity: float,
    weight_bytes: int,
    kv_bytes_per_token: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    reserve_fraction: float = 0.05,
) -> int:
    """Number of KV blocks that fit beside the weights and the reserve."""
    free = int(mem_capacity) - weight_bytes - int(reserve_fraction * mem_capacity)
    if free <= 0:
        return 0
    return free // (block_size * kv_bytes_per_token)


@dataclass
class BlockTable:
    request_id: int
    blocks: list[int] = field(default_factory=list)
    tokens_used: int = 0


class BlockPool:
    """Physical blocks of one device.

    Blocks are handed out lowest-id-first from a free stack so allocation
    order is deterministic.
    """

    def __init__(self, total_blocks: int, block_size: int = DEFAULT_BLOCK_SIZE, device: str = ""):
        if total_blocks < 0 or block_size < 1:
            raise ValueError("total_blocks must be >= 0 and block_size >= 1")
        self.device = device
        self.block_size = block_size
        self.total_blocks = total_blocks
        self._free = list(range(total_blocks - 1, -1, -1))
        self.tables: dict[int, BlockTable] = {}

    @property
    def free_blocks(self) -> int:
        return len(self._free)

    @property
    def allocated_blocks(self) -> int:
        return self.total_blocks - len(self._free)

    @property
    def utilization(self) -> float:
        return self.allocated_blocks / self.total_blocks if self.total_blocks else 0.0

    def register(self, request_id: int) -> BlockTable:
        if request_id in self.tables:
            raise BlockError(f"request {request_id} already registered on {self.device}")
        table = self.tables[request_id] = BlockTable(request_id)
        return table

    def table(self, request_id: int) -> BlockTable:
        try:
            return self.tables[request_id]
        except KeyError:
            raise BlockError(f"request {request_id} not registered on {self.device}") from None

    def blocks_needed(self, request_id: int, new_tokens: int) -> int:
        t = self.table(request_id)
        return blocks_for(t.tokens_used + new_tokens, self.block_size) - len(t.blocks)

    def allocate(self, request_id: int, new_tokens: int) -> Optional[int]:
        """Grow the request by ``new_tokens``; ``None`` if blocks are short.

        Returns the number of new blocks on success. On failure nothing
        changes.
        """
        if new_tokens < 0:
            raise ValueError("new_tokens must be >= 0")
        t = self.table(request_id)
        need = blocks_for(t.tokens_used + new_tokens, self.block_size) - len(t.blocks)
        if need > len(self._free):
            return None
        free = self._free
        for _ in range(need):
            t.blocks.append(free.pop())
        t.tokens_used += new_tokens
        return need

    def can_allocate(self, blocks: int) -> bool:
        return blocks <= len(self._free)

    def free(self, request_id: int) -> int:
        """Release every block of the request and forget it."""
        t = self.tables.pop(request_id, None)
        if t is None:
            raise BlockError(f"request {request_id} not registered on {self.device}")
        self._free.extend(reversed(t.blocks))
        return len(t.blocks)

    def admit(self, prompt_tokens: int, max_mem_ratio: float) -> bool:
        """Would admitting ``prompt_tokens`` keep utilization within the ratio?"""
        return admit(self, prompt_tokens, max_mem_ratio)

    def check(self) -> None:
        """Assert conservation and exclusivity. Cheap enough for tests."""
        used = [b for t in self.tables.values() for b in t.blocks]
        assert len(used) + len(self._free) == self.total_blocks, "block conservation"
        assert len(set(used)) == len(used), "block in two tables"
        assert not set(used) & set(self._free), "allocated block on free list"
        for t in self.tables.values():
            assert blocks_for(t.tokens_used, self.block_size) == len(t.blocks)


def admit(pool: BlockPool, prompt_tokens: int, max_mem_ratio: float) -> bool:
    if not 0 < max_mem_ratio <= 1:
        raise ValueError("max_mem_ratio must be in (0, 1]")
    need = blocks_for(prompt_tokens, pool.block_size)
    if need > pool.free_blocks:
        return False
    # (allocated + need) / total <= ratio, kept division-free
    return pool.allocated_blocks + need <= max_mem_ratio * pool.total_blocks + 1e-9


def select_victim(candidates: Iterable, policy: str = "latest-arrival"):
    """Pick the request to preempt. Candidates need ``arrival_time`` and ``id``."""
    cands = list(candidates)
    if not cands:
        raise BlockError("nothing to preempt")
    if policy == "latest-arrival":
        return max(cands, key=lambda r: (r.arrival_time, r.id))
    if policy == "earliest-arrival":
        return min(cands, key=lambda r: (r.arrival_time, r.id))
    raise ValueError(f"unknown victim policy {policy!r}")


def preempt(pool: BlockPool, candidates: Iterable, policy: str = "latest-arrival"):
    """Free the victim's device blocks; returns ``(victim, swap_bytes_blocks)``.

    The second element is the number of blocks that must travel to the host;
    multiply by ``block_size * kv_bytes_per_token`` for bytes.
    """
    victim = select_victim(candidates, policy)
    return victim, pool.free(victim.id)


class MemoryCache:
    """Host-side LRU store of whole-conversation KV prefixes."""

    def __init__(
        self,
        capacity_bytes: int,
        block_bytes: int,
        block_size: int = DEFAULT_BLOCK_SIZE,
        fetch_ns_per_block: int = DEFAULT_FETCH_NS_PER_BLOCK,
    ):
        self.capacity_bytes = capacity_bytes
        self.block_bytes = block_bytes
        self.block_size = block_size
        self.fetch_ns_per_block = fetch_ns_per_block
        # conversation id -> (tokens, last touch); order is LRU -> MRU
        self.entries: OrderedDict[int, tuple[int, int]] = OrderedDict()
        self.used_bytes = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def _bytes(self, tokens: int) -> int:
        return blocks_for(tokens, self.block_size) * self.block_bytes

    def store(self, conversation_id: int, tokens: int, now: int) -> bool:
        """Save (or replace) a conversation prefix, evicting LRU entries."""
        old = self.entries.pop(conversation_id, None)
        if old is not None:
            self.used_bytes -= self._bytes(old[0])
        size = self._bytes(tokens)
        if size > self.capacity_bytes:
            return False
        while self.used_bytes + size > self.capacity_bytes:
            _, (t, _) = self.entries.popitem(last=False)
            self.used_bytes -= self._bytes(t)
            self.evictions += 1
        self.entries[conversation_id] = (tokens, now)
        self.used_bytes += size
        return True

    def peek(self, conversation_id: int) -> int:
        """Cached tokens for a conversation (0 if absent) without touching LRU order."""
        entry = self.entries.get(conversation_id)
        return entry[0] if entry is not None else 0

    def lookup(self, conversation_id: int, prefix_tokens: int, now: int = 0):
        """Return ``(hit_tokens, blocks, fetch_delay_ns)`` or ``None`` on a miss."""
        if prefix_tokens < 0:
            raise ValueError("prefix_tokens must be >= 0")
        entry = self.entries.get(conversation_id)
        if entry is None or prefix_tokens == 0:
            self.misses += 1
            return None
        hit = min(entry[0], prefix_tokens)
        self.entries.move_to_end(conversation_id)
        self.entries[conversation_id] = (entry[0], now)
        blocks = blocks_for(hit, self.block_size)
        self.hits += 1
        return hit, blocks, blocks * self.fetch_ns_per_block


def cache_lookup(cache: MemoryCache, conversation_id: int, prefix_tokens: int, now: int = 0):
    return cache.lookup(conversation_id, prefix_tokens, now)
