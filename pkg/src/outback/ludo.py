"""Dynamic minimal perfect hashing: construction and the compute-side index.

A table of ``B`` buckets x 4 slots is built in three steps:

1. every key picks one of its candidate buckets ``h0(k) % B`` / ``h1(k) % B``
   (two-choice placement, cuckoo displacement when both are full);
2. every bucket gets the smallest 8-bit seed under which its residents
   land in distinct slots;
3. an Othello locator learns each key's choice bit.

The locator and seeds form the compute half (:class:`TableIndex`); the
slot array filled with payload words is the memory half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import xxhash

from outback import _kernels, othello
from outback.errors import AssignmentFailed, NoSeed
from outback.hashing import (
    BUCKET_SEEDS,
    DIRECTORY_SEED,
    SEED_SPACE,
    SLOT_SEED_BASE,
    SLOTS_PER_BUCKET,
    KeyBatch,
    slot_of,
)
from outback.othello import Locator

DEFAULT_LOAD_FACTOR = 0.95
MAX_DISPLACEMENTS = 4096
ASSIGN_RNG_SEED = 0x5DEECE66D

_xxh64 = xxhash.xxh64_intdigest


def bucket_count_for(n: int, load_factor: float) -> int:
    if not 0 < load_factor <= 1:
        raise ValueError(f"load factor must be in (0, 1], got {load_factor}")
    return max(1, math.ceil(n / (SLOTS_PER_BUCKET * load_factor)))


def _as_batch(keys: Sequence[bytes] | KeyBatch) -> KeyBatch:
    return keys if isinstance(keys, KeyBatch) else KeyBatch.of(keys)


@dataclass
class BucketAssignment:
    bucket_count: int
    buckets: np.ndarray  # bucket of each key, -1 when unplaced
    choices: np.ndarray  # 0 when the key sits in h0, 1 for h1
    members: np.ndarray  # bucket_count * 4 key indices, -1 free
    counts: np.ndarray  # residents per bucket

    def occupancy(self) -> np.ndarray:
        """Histogram of bucket sizes 0..4."""
        return np.bincount(self.counts, minlength=SLOTS_PER_BUCKET + 1)


def _assign(batch: KeyBatch, bucket_count: int, max_steps: int) -> tuple[BucketAssignment, np.ndarray]:
    h0 = batch.reduced(BUCKET_SEEDS[0], bucket_count)
    h1 = batch.reduced(BUCKET_SEEDS[1], bucket_count)
    members, counts, where, homeless = _kernels.assign_buckets(h0, h1, bucket_count, max_steps, ASSIGN_RNG_SEED)
    choices = ((where != h0) & (where >= 0)).astype(np.uint8)
    return BucketAssignment(bucket_count, where, choices, members, counts), homeless


def assign_buckets(
    keys: Sequence[bytes] | KeyBatch, bucket_count: int, *, max_steps: int = MAX_DISPLACEMENTS
) -> BucketAssignment:
    """Place every key in one of its two candidate buckets, at most 4 per bucket.

    Raises :class:`AssignmentFailed` when a displacement walk exceeds
    ``max_steps``; the caller should retry with more buckets.
    """
    batch = _as_batch(keys)
    if bucket_count * SLOTS_PER_BUCKET < len(batch):
        raise AssignmentFailed(f"{len(batch)} keys cannot fit {bucket_count} buckets")
    assignment, homeless = _assign(batch, bucket_count, max_steps)
    if homeless.size:
        raise AssignmentFailed(f"{homeless.size} keys left after {max_steps} displacements")
    return assignment


def find_seed(bucket_keys: Sequence[bytes]) -> int:
    """Smallest seed in 0..255 mapping the (at most 4) keys to distinct slots."""
    k = len(bucket_keys)
    if k > SLOTS_PER_BUCKET:
        raise ValueError("a bucket holds at most 4 keys")
    for seed in range(SEED_SPACE):
        seen = 0
        for key in bucket_keys:
            bit = 1 << slot_of(key, seed)
            if seen & bit:
                break
            seen |= bit
        else:
            return seed
    raise NoSeed(f"no seed separates {k} keys")


@dataclass
class Construction:
    """Both halves of a freshly built table.

    ``slot_of_key[i]`` is the flat slot index (``bucket * 4 + slot``) of
    key ``i``, or -1 for keys routed to the fallback table (listed in
    ``fallback``).
    """

    bucket_count: int
    locator: Locator
    seeds: bytearray
    slots: np.ndarray
    slot_of_key: np.ndarray
    fallback: np.ndarray
    assignment: BucketAssignment

    @property
    def compute_bits(self) -> int:
        return self.locator.bits + 8 * len(self.seeds)


def construct(
    keys: Sequence[bytes] | KeyBatch,
    payloads: np.ndarray | Sequence[int] | None = None,
    load_factor: float = DEFAULT_LOAD_FACTOR,
    *,
    bucket_count: int | None = None,
    version: int = 0,
    max_steps: int = MAX_DISPLACEMENTS,
    fallback_limit: int | None = None,
) -> Construction:
    """Build a DMPH table for distinct ``keys``.

    ``payloads[i]`` is the 64-bit word stored in key ``i``'s slot.  Keys
    whose displacement walk fails or whose bucket has no separating seed
    go to ``fallback``; more than ``fallback_limit`` of them (default
    ``max(64, n // 1000)``) raises :class:`AssignmentFailed`.
    """
    batch = _as_batch(keys)
    n = len(batch)
    if bucket_count is None:
        bucket_count = bucket_count_for(n, load_factor)
    if bucket_count * SLOTS_PER_BUCKET < n:
        raise AssignmentFailed(f"{n} keys cannot fit {bucket_count} buckets")
    if payloads is None:
        payloads = np.zeros(n, dtype=np.uint64)
    payloads = np.asarray(payloads, dtype=np.uint64)
    if payloads.shape != (n,):
        raise ValueError("one payload word per key")
    if fallback_limit is None:
        fallback_limit = max(64, n // 1000)

    assignment, homeless = _assign(batch, bucket_count, max_steps)
    seeds, slots_in_bucket, ejected = _kernels.search_seeds(
        batch.buf, batch.offsets, assignment.members, assignment.counts, np.uint64(SLOT_SEED_BASE)
    )
    fallback = np.union1d(homeless, np.flatnonzero(ejected)).astype(np.int64)
    if fallback.size > fallback_limit:
        raise AssignmentFailed(f"{fallback.size} keys need the fallback table (limit {fallback_limit})")

    placed = slots_in_bucket >= 0
    slot_of_key = np.where(placed, assignment.buckets * SLOTS_PER_BUCKET + slots_in_bucket, -1)
    table = np.zeros(bucket_count * SLOTS_PER_BUCKET, dtype=np.uint64)
    table[slot_of_key[placed]] = payloads[placed]

    if fallback.size:
        keep = np.flatnonzero(placed)
        sub = KeyBatch.of([batch.key(int(i)) for i in keep])
        locator = othello.build_batch(sub, assignment.choices[keep], version)
    else:
        locator = othello.build_batch(batch, assignment.choices, version)
    return Construction(bucket_count, locator, bytearray(seeds.tobytes()), table, slot_of_key, fallback, assignment)


@dataclass
class TableIndex:
    """Compute half of one DMPH table: locator plus the cached seed array."""

    table_id: int
    local_depth: int
    bucket_count: int
    locator: Locator
    seeds: bytearray

    def locate(self, key: bytes) -> tuple[int, int]:
        bucket = _xxh64(key, BUCKET_SEEDS[self.locator.query(key)]) % self.bucket_count
        return bucket, _xxh64(key, SLOT_SEED_BASE + self.seeds[bucket]) & 3

    def bucket_of(self, key: bytes) -> int:
        return _xxh64(key, BUCKET_SEEDS[self.locator.query(key)]) % self.bucket_count

    @property
    def size_bits(self) -> int:
        return self.locator.bits + 8 * len(self.seeds)

    @property
    def nbytes(self) -> int:
        return self.locator.nbytes + len(self.seeds) + 16


def split_directory(
    directory: Sequence[int], global_depth: int, stale_id: int, new_ids: Sequence[int], new_local_depth: int
) -> tuple[list[int], int]:
    """Directory after splitting ``stale_id`` into ``new_ids`` (bit 0, bit 1)."""
    entries = list(directory)
    if new_local_depth > global_depth:
        entries = [entries[i >> 1] for i in range(2 * len(entries))]
        global_depth += 1
    shift = global_depth - new_local_depth
    for i, table_id in enumerate(entries):
        if table_id == stale_id:
            entries[i] = new_ids[(i >> shift) & 1]
    return entries, global_depth


def split_bit(key: bytes, new_local_depth: int) -> int:
    """Which half of a split table (local depth now ``new_local_depth``) owns ``key``."""
    return (_xxh64(key, DIRECTORY_SEED) >> (64 - new_local_depth)) & 1


@dataclass
class CompactIndex:
    """Everything a compute node caches: directory plus per-table locator and seeds."""

    global_depth: int = 0
    directory: list[int] = field(default_factory=lambda: [0])
    tables: dict[int, TableIndex] = field(default_factory=dict)
    epoch: int = 0

    def table_for(self, key: bytes) -> TableIndex:
        if self.global_depth == 0:
            return self.tables[self.directory[0]]
        return self.tables[self.directory[_xxh64(key, DIRECTORY_SEED) >> (64 - self.global_depth)]]

    def locate(self, key: bytes) -> tuple[int, int, int]:
        """``(table_id, bucket, slot)`` for ``key``; unknown keys get a well-formed miss."""
        table = self.table_for(key)
        bucket, slot = table.locate(key)
        return table.table_id, bucket, slot

    def locate_bucket(self, key: bytes) -> tuple[int, int]:
        table = self.table_for(key)
        return table.table_id, table.bucket_of(key)

    def apply_seed(self, table_id: int, bucket: int, seed: int) -> bool:
        table = self.tables.get(table_id)
        if table is None or table.seeds[bucket] == seed:
            return False
        table.seeds[bucket] = seed
        return True

    def split(self, stale_id: int, new_tables: Sequence[TableIndex], global_depth: int, epoch: int) -> CompactIndex:
        """New index where ``stale_id`` is replaced by two split tables."""
        first, second = sorted(new_tables, key=lambda t: t.table_id)
        directory, depth = split_directory(
            self.directory, self.global_depth, stale_id, (first.table_id, second.table_id), first.local_depth
        )
        if depth != global_depth:
            raise ValueError(f"directory depth {depth} disagrees with published depth {global_depth}")
        tables = {tid: t for tid, t in self.tables.items() if tid != stale_id}
        tables[first.table_id] = first
        tables[second.table_id] = second
        return CompactIndex(depth, directory, tables, epoch)

    @property
    def size_bits(self) -> int:
        """Locator and seed bits plus 32 bits per directory entry."""
        return sum(t.size_bits for t in self.tables.values()) + 32 * len(self.directory)

    @property
    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.tables.values()) + 4 * len(self.directory) + 16

    @property
    def key_capacity(self) -> int:
        return sum(t.bucket_count * SLOTS_PER_BUCKET for t in self.tables.values())
