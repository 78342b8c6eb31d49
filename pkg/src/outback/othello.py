"""One-bit Othello bucket locator.

Each key becomes an edge between bit ``hA(k) mod m_a`` of array A and bit
``hB(k) mod m_b`` of array B.  When the graph is acyclic the vertex bits
can be chosen so that ``A[hA(k)] ^ B[hB(k)]`` equals the key's bucket
choice.  The structure stores no keys; unknown keys get an arbitrary but
deterministic bit.

Serialized layout (little-endian)::

    0   m_a       u64
    8   m_b       u64
    16  seed_a    u64
    24  seed_b    u64
    32  version   u64
    40  A bits    ceil(m_a / 8) bytes, bit i at byte i >> 3, position i & 7
    ..  B bits    ceil(m_b / 8) bytes
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np
import xxhash

from outback import _kernels
from outback.errors import ConstructionFailed, MalformedBytes
from outback.hashing import LOCATOR_SEED_A, LOCATOR_SEED_B, KeyBatch, derive_seed

MAX_ATTEMPTS = 32
_HEADER = struct.Struct("<QQQQQ")
HEADER_SIZE = _HEADER.size

_xxh64 = xxhash.xxh64_intdigest


def array_sizes(n: int) -> tuple[int, int]:
    """``(m_a, m_b)`` = ``(ceil(1.33 n), n)``, at least one bit each."""
    return max(1, (133 * n + 99) // 100), max(1, n)


class Locator:
    __slots__ = ("m_a", "m_b", "seed_a", "seed_b", "version", "_a", "_b")

    def __init__(self, m_a: int, m_b: int, seed_a: int, seed_b: int, a: bytes, b: bytes, version: int = 0):
        self.m_a = m_a
        self.m_b = m_b
        self.seed_a = seed_a
        self.seed_b = seed_b
        self.version = version
        self._a = a
        self._b = b

    def query(self, key: bytes) -> int:
        ia = _xxh64(key, self.seed_a) % self.m_a
        ib = _xxh64(key, self.seed_b) % self.m_b
        return ((self._a[ia >> 3] >> (ia & 7)) ^ (self._b[ib >> 3] >> (ib & 7))) & 1

    @property
    def bits(self) -> int:
        """Size of the two arrays in bits, before byte padding."""
        return self.m_a + self.m_b

    @property
    def nbytes(self) -> int:
        return HEADER_SIZE + len(self._a) + len(self._b)

    def serialize(self) -> bytes:
        return _HEADER.pack(self.m_a, self.m_b, self.seed_a, self.seed_b, self.version) + self._a + self._b

    @classmethod
    def deserialize(cls, data: bytes) -> Locator:
        locator, end = cls.read_from(data, 0)
        if end != len(data):
            raise MalformedBytes(f"{len(data) - end} trailing bytes after locator")
        return locator

    @classmethod
    def read_from(cls, data: bytes | memoryview, offset: int) -> tuple[Locator, int]:
        """Parse a locator embedded at ``offset``; returns it and the end offset."""
        if len(data) - offset < HEADER_SIZE:
            raise MalformedBytes("truncated locator header")
        m_a, m_b, seed_a, seed_b, version = _HEADER.unpack_from(data, offset)
        if m_a == 0 or m_b == 0:
            raise MalformedBytes("locator arrays must be non-empty")
        la, lb = (m_a + 7) // 8, (m_b + 7) // 8
        start = offset + HEADER_SIZE
        end = start + la + lb
        if len(data) < end:
            raise MalformedBytes("truncated locator arrays")
        a = bytes(data[start : start + la])
        b = bytes(data[start + la : end])
        return cls(m_a, m_b, seed_a, seed_b, a, b, version), end

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Locator):
            return NotImplemented
        return self.serialize() == other.serialize()

    def __repr__(self) -> str:
        return f"Locator(m_a={self.m_a}, m_b={self.m_b}, version={self.version})"


def build_batch(batch: KeyBatch, bits: np.ndarray, version: int = 0, *, max_attempts: int = MAX_ATTEMPTS) -> Locator:
    n = len(batch)
    m_a, m_b = array_sizes(n)
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    for attempt in range(max_attempts):
        seed_a = derive_seed(LOCATOR_SEED_A, attempt)
        seed_b = derive_seed(LOCATOR_SEED_B, attempt)
        ea = batch.reduced(seed_a, m_a)
        eb = batch.reduced(seed_b, m_b)
        ok, values = _kernels.othello_values(ea, eb, bits, m_a, m_b)
        if ok:
            a = np.packbits(values[:m_a], bitorder="little").tobytes()
            b = np.packbits(values[m_a:], bitorder="little").tobytes()
            return Locator(m_a, m_b, seed_a, seed_b, a, b, version)
    raise ConstructionFailed(f"no acyclic locator graph for {n} keys after {max_attempts} attempts")


def build(assignments: Iterable[tuple[bytes, int]], version: int = 0) -> Locator:
    """Locator answering ``bit`` for every ``(key, bit)`` pair; keys must be distinct."""
    pairs = list(assignments)
    batch = KeyBatch.of([k for k, _ in pairs])
    bits = np.fromiter((b for _, b in pairs), dtype=np.uint8, count=len(pairs))
    if np.any(bits > 1):
        raise ValueError("locator values are single bits")
    return build_batch(batch, bits, version)
