"""Memory half of one DMPH table."""

from __future__ import annotations

import threading
from array import array

import numpy as np

from outback.hashing import SLOTS_PER_BUCKET
from outback.memnode.layout import LEN_FIELD, LEN_SHIFT, LEN_MASK
from outback.memnode.overflow import FallbackTable, OverflowCache


class MemTable:
    """Slot array, authoritative seeds, overflow cache and fallback of one table."""

    def __init__(
        self,
        table_id: int,
        local_depth: int,
        bucket_count: int,
        cache_capacity: int,
        slots: array | None = None,
        seeds: bytearray | None = None,
    ):
        self.table_id = table_id
        self.local_depth = local_depth
        self.bucket_count = bucket_count
        self.slots = slots if slots is not None else array("Q", bytes(8 * bucket_count * SLOTS_PER_BUCKET))
        self.seeds = seeds if seeds is not None else bytearray(bucket_count)
        if len(self.slots) != bucket_count * SLOTS_PER_BUCKET or len(self.seeds) != bucket_count:
            raise ValueError("slot and seed arrays disagree with the bucket count")
        self.cache = OverflowCache(cache_capacity)
        self.fallback = FallbackTable()
        self.side_lock = threading.Lock()
        self.stopped = False
        self.residents = self.count_residents()

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @property
    def load_factor(self) -> float:
        return self.residents / self.slot_count

    @property
    def key_count(self) -> int:
        return self.residents + len(self.cache) + len(self.fallback)

    def words(self) -> np.ndarray:
        """Zero-copy view of the slot array."""
        return np.frombuffer(self.slots, dtype=np.uint64)

    def count_residents(self) -> int:
        return int(np.count_nonzero((self.words() >> np.uint64(LEN_SHIFT)) & np.uint64(LEN_MASK)))

    def add_residents(self, delta: int) -> None:
        with self.side_lock:
            self.residents += delta

    def clear_lengths(self) -> None:
        view = self.words()
        view &= np.uint64(~LEN_FIELD & (1 << 64) - 1)
        self.residents = 0

    def index_bits(self) -> int:
        """Bits of index metadata: slot words, seeds, and side-table entries (key + 64-bit pointer)."""
        side = 8 * (self.cache.key_bytes() + self.fallback.key_bytes()) + 64 * (len(self.cache) + len(self.fallback))
        return 64 * self.slot_count + 8 * len(self.seeds) + side
