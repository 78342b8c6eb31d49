"""Side tables for keys that have no slot: the overflow cache and the fallback table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import xxhash

from outback.hashing import BUCKET_SEEDS, derive_seed

_xxh64 = xxhash.xxh64_intdigest


@dataclass
class CachedBlock:
    bucket: int
    address: int
    length: int


class OverflowCache:
    """Keys whose bucket had no free slot, indexed by key and by home bucket."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self._entries: dict[bytes, CachedBlock] = {}
        self._by_bucket: dict[int, set[bytes]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: bytes) -> bool:
        return key in self._entries

    def get(self, key: bytes) -> CachedBlock | None:
        return self._entries.get(key)

    def put(self, key: bytes, bucket: int, address: int, length: int) -> None:
        self._entries[key] = CachedBlock(bucket, address, length)
        self._by_bucket.setdefault(bucket, set()).add(key)

    def pop(self, key: bytes) -> CachedBlock | None:
        entry = self._entries.pop(key, None)
        if entry is not None:
            members = self._by_bucket[entry.bucket]
            members.discard(key)
            if not members:
                del self._by_bucket[entry.bucket]
        return entry

    def keys_in(self, bucket: int) -> set[bytes]:
        return self._by_bucket.get(bucket, set())

    def items(self) -> Iterator[tuple[bytes, CachedBlock]]:
        return iter(list(self._entries.items()))

    def key_bytes(self) -> int:
        return sum(len(k) for k in self._entries)


class FallbackTable:
    """(2,4)-cuckoo table for the few keys a construction could not place.

    Maps key -> ``(address, length)``.  Grows by rehashing into twice the
    buckets when a displacement walk fails.
    """

    MAX_KICKS = 64

    def __init__(self, bucket_count: int = 4):
        self._reset(max(1, bucket_count), 0)

    def _reset(self, bucket_count: int, generation: int) -> None:
        self._generation = generation
        self._seeds = (derive_seed(BUCKET_SEEDS[0], 1000 + generation), derive_seed(BUCKET_SEEDS[1], 1000 + generation))
        self._buckets: list[dict[bytes, tuple[int, int]]] = [{} for _ in range(bucket_count)]
        self._size = 0

    def _homes(self, key: bytes) -> tuple[int, int]:
        n = len(self._buckets)
        return _xxh64(key, self._seeds[0]) % n, _xxh64(key, self._seeds[1]) % n

    def __len__(self) -> int:
        return self._size

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def get(self, key: bytes) -> tuple[int, int] | None:
        a, b = self._homes(key)
        found = self._buckets[a].get(key)
        return found if found is not None else self._buckets[b].get(key)

    def put(self, key: bytes, address: int, length: int) -> None:
        for home in self._homes(key):
            if key in self._buckets[home]:
                self._buckets[home][key] = (address, length)
                return
        self._size += 1
        item = (key, (address, length))
        for _ in range(self.MAX_KICKS):
            a, b = self._homes(item[0])
            for home in (a, b):
                if len(self._buckets[home]) < 4:
                    self._buckets[home][item[0]] = item[1]
                    return
            victim_bucket = self._buckets[a if _xxh64(item[0], self._size) & 1 else b]
            victim = next(iter(victim_bucket))
            evicted = (victim, victim_bucket.pop(victim))
            victim_bucket[item[0]] = item[1]
            item = evicted
        self._grow(item)

    def _grow(self, pending: tuple[bytes, tuple[int, int]]) -> None:
        entries = list(self.items()) + [pending]
        self._reset(2 * len(self._buckets), self._generation + 1)
        for key, (address, length) in entries:
            self.put(key, address, length)

    def pop(self, key: bytes) -> tuple[int, int] | None:
        for home in self._homes(key):
            found = self._buckets[home].pop(key, None)
            if found is not None:
                self._size -= 1
                return found
        return None

    def items(self) -> Iterator[tuple[bytes, tuple[int, int]]]:
        return iter([item for bucket in self._buckets for item in bucket.items()])

    def key_bytes(self) -> int:
        return sum(len(k) for bucket in self._buckets for k in bucket)
