"""Seeded hash primitives shared by compute and memory nodes.

Everything derives from XXH64 (``xxhash.xxh64_intdigest``), a pinned
public algorithm with a 64-bit seed, so both roles compute identical
bucket and slot indices in any process.  Each role of the hash gets its
own fixed seed:

=================  ==================  ====================================
name               seed                used for
=================  ==================  ====================================
BUCKET_SEEDS[0]    0x243F6A8885A308D3  first candidate bucket h0
BUCKET_SEEDS[1]    0x13198A2E03707344  second candidate bucket h1
LOCATOR_SEED_A     0xA4093822299F31D0  base of the locator array A seeds
LOCATOR_SEED_B     0x082EFA98EC4E6C89  base of the locator array B seeds
FINGERPRINT_SEED   0x452821E638D01377  6-bit slot fingerprint (top bits)
DIRECTORY_SEED     0xBE5466CF34E90C6C  extendible-hashing directory bits
SLOT_SEED_BASE     0xC0AC29B7C97C50DD  slot hash, widened as base + seed8
RING_SEED          0x3F84D5B5B5470917  consistent-hashing ring points
=================  ==================  ====================================
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import xxhash

from outback import _kernels

MASK64 = (1 << 64) - 1

BUCKET_SEEDS = (0x243F6A8885A308D3, 0x13198A2E03707344)
LOCATOR_SEED_A = 0xA4093822299F31D0
LOCATOR_SEED_B = 0x082EFA98EC4E6C89
FINGERPRINT_SEED = 0x452821E638D01377
DIRECTORY_SEED = 0xBE5466CF34E90C6C
SLOT_SEED_BASE = 0xC0AC29B7C97C50DD
RING_SEED = 0x3F84D5B5B5470917

SLOTS_PER_BUCKET = 4
SEED_SPACE = 256
FINGERPRINT_BITS = 6

_xxh64 = xxhash.xxh64_intdigest


def digest(key: bytes, seed: int) -> int:
    """64-bit XXH64 digest of ``key`` under ``seed``."""
    if not key:
        raise ValueError("keys must be non-empty")
    return _xxh64(key, seed)


def widen(seed8: int) -> int:
    return (SLOT_SEED_BASE + seed8) & MASK64


def slot_of(key: bytes, seed8: int) -> int:
    return _xxh64(key, SLOT_SEED_BASE + seed8) & 3


def fingerprint_of(key: bytes) -> int:
    return _xxh64(key, FINGERPRINT_SEED) >> (64 - FINGERPRINT_BITS)


def candidate_bucket(key: bytes, choice: int, bucket_count: int) -> int:
    return _xxh64(key, BUCKET_SEEDS[choice]) % bucket_count


def directory_hash(key: bytes) -> int:
    return _xxh64(key, DIRECTORY_SEED)


def directory_index(key: bytes, global_depth: int) -> int:
    """Top ``global_depth`` bits of the directory hash."""
    if global_depth == 0:
        return 0
    return _xxh64(key, DIRECTORY_SEED) >> (64 - global_depth)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, attempt: int) -> int:
    """Deterministic fresh seed for retry ``attempt`` of a construction."""
    return splitmix64((base + attempt * 0x632BE59BD9B4E019) & MASK64)


@dataclass(frozen=True)
class KeyBatch:
    """Keys packed for the compiled kernels."""

    buf: np.ndarray
    offsets: np.ndarray

    @classmethod
    def of(cls, keys: Sequence[bytes]) -> KeyBatch:
        lengths = np.fromiter((len(k) for k in keys), dtype=np.int64, count=len(keys))
        if len(keys) and lengths.min() == 0:
            raise ValueError("keys must be non-empty")
        offsets = np.zeros(len(keys) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        buf = np.frombuffer(b"".join(keys), dtype=np.uint8)
        if buf.size == 0:
            buf = np.zeros(1, dtype=np.uint8)
        return cls(buf, offsets)

    @classmethod
    def fixed_width(cls, raw: bytes | np.ndarray, width: int) -> KeyBatch:
        """Batch over ``raw`` split into consecutive ``width``-byte keys."""
        buf = np.frombuffer(raw, dtype=np.uint8) if isinstance(raw, (bytes, bytearray)) else raw
        n = buf.size // width
        return cls(buf, np.arange(0, n * width + 1, width, dtype=np.int64))

    def __len__(self) -> int:
        return self.offsets.size - 1

    def key(self, i: int) -> bytes:
        return self.buf[self.offsets[i] : self.offsets[i + 1]].tobytes()

    def digests(self, seed: int) -> np.ndarray:
        return _kernels.digest_many(self.buf, self.offsets, np.uint64(seed))

    def reduced(self, seed: int, modulus: int) -> np.ndarray:
        """``digest(key, seed) % modulus`` for every key, as int64."""
        return _kernels.reduce_many(self.buf, self.offsets, np.uint64(seed), modulus)

    def fingerprints(self) -> np.ndarray:
        return self.digests(FINGERPRINT_SEED) >> np.uint64(64 - FINGERPRINT_BITS)
