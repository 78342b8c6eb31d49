"""Slot words, KV blocks and the append-only KV log.

Slot word (64 bits)::

    bit 63        cache bit (an overflow-cached key hashes to this slot)
    bits 57..62   6-bit fingerprint
    bits 48..56   9-bit block length (0 = empty slot)
    bits 0..47    48-bit log address

KV block: ``key_len u64 | val_len u64 | key | value``, at most 511 bytes.
Log addresses are ``chunk << 20 | offset``; chunks are fixed 1 MiB
buffers that are never reallocated, so readers need no lock.
"""

from __future__ import annotations

import struct
import threading
from typing import NamedTuple

from outback.errors import BlockTooLarge, MalformedBytes, OutOfRange

CACHE_BIT = 1 << 63
FP_SHIFT = 57
FP_MASK = 0x3F
LEN_SHIFT = 48
LEN_MASK = 0x1FF
ADDR_MASK = (1 << 48) - 1
LEN_FIELD = LEN_MASK << LEN_SHIFT

MAX_BLOCK = LEN_MASK
BLOCK_HEADER = struct.Struct("<QQ")

CHUNK_BITS = 20
CHUNK_SIZE = 1 << CHUNK_BITS
_OFFSET_MASK = CHUNK_SIZE - 1


def pack_slot(cache: bool, fingerprint: int, length: int, address: int) -> int:
    if not 0 <= fingerprint <= FP_MASK:
        raise ValueError(f"fingerprint {fingerprint} exceeds 6 bits")
    if not 0 <= length <= LEN_MASK:
        raise ValueError(f"length {length} exceeds 9 bits")
    if not 0 <= address <= ADDR_MASK:
        raise ValueError(f"address {address:#x} exceeds 48 bits")
    return (CACHE_BIT if cache else 0) | fingerprint << FP_SHIFT | length << LEN_SHIFT | address


def slot_length(word: int) -> int:
    return (word >> LEN_SHIFT) & LEN_MASK


def slot_fingerprint(word: int) -> int:
    return (word >> FP_SHIFT) & FP_MASK


def slot_address(word: int) -> int:
    return word & ADDR_MASK


def repoint(word: int, address: int, length: int) -> int:
    """Same cache bit and fingerprint, new block."""
    return (word & (CACHE_BIT | FP_MASK << FP_SHIFT)) | length << LEN_SHIFT | address


class SlotEntry(NamedTuple):
    cache: bool
    fingerprint: int
    length: int
    address: int

    def pack(self) -> int:
        return pack_slot(self.cache, self.fingerprint, self.length, self.address)

    @classmethod
    def unpack(cls, word: int) -> SlotEntry:
        return cls(bool(word & CACHE_BIT), slot_fingerprint(word), slot_length(word), slot_address(word))

    @property
    def empty(self) -> bool:
        return self.length == 0


def encode_block(key: bytes, value: bytes) -> bytes:
    if not key:
        raise ValueError("keys must be non-empty")
    size = BLOCK_HEADER.size + len(key) + len(value)
    if size > MAX_BLOCK:
        raise BlockTooLarge(f"block of {size} bytes exceeds {MAX_BLOCK}")
    return BLOCK_HEADER.pack(len(key), len(value)) + key + value


def decode_block(raw: bytes) -> tuple[bytes, bytes]:
    if len(raw) < BLOCK_HEADER.size:
        raise MalformedBytes("truncated block header")
    klen, vlen = BLOCK_HEADER.unpack_from(raw)
    if BLOCK_HEADER.size + klen + vlen != len(raw):
        raise MalformedBytes(f"block lengths {klen}+{vlen} disagree with {len(raw)} bytes")
    return raw[16 : 16 + klen], raw[16 + klen :]


def block_key(raw: bytes) -> bytes:
    if len(raw) < BLOCK_HEADER.size:
        return b""
    klen = int.from_bytes(raw[:8], "little")
    return raw[16 : 16 + klen]


class KvLog:
    """Append-only log of KV blocks."""

    def __init__(self) -> None:
        self._chunks: list[bytearray] = [bytearray(CHUNK_SIZE)]
        self._tail = 0
        self._lock = threading.Lock()
        self.appended = 0

    def append(self, block: bytes) -> int:
        size = len(block)
        if not 0 < size <= MAX_BLOCK:
            raise BlockTooLarge(f"block of {size} bytes")
        with self._lock:
            if self._tail + size > CHUNK_SIZE:
                self._chunks.append(bytearray(CHUNK_SIZE))
                self._tail = 0
            chunk_no = len(self._chunks) - 1
            offset = self._tail
            self._chunks[chunk_no][offset : offset + size] = block
            self._tail = offset + size
            self.appended += 1
        return chunk_no << CHUNK_BITS | offset

    def read(self, address: int, length: int) -> bytes:
        chunk_no = address >> CHUNK_BITS
        offset = address & _OFFSET_MASK
        if chunk_no >= len(self._chunks) or offset + length > CHUNK_SIZE:
            raise OutOfRange(f"log read {address:#x}+{length} past the extent")
        return bytes(self._chunks[chunk_no][offset : offset + length])

    def read_key(self, address: int) -> bytes:
        chunk = self._chunks[address >> CHUNK_BITS]
        offset = address & _OFFSET_MASK
        klen = int.from_bytes(chunk[offset : offset + 8], "little")
        return bytes(chunk[offset + 16 : offset + 16 + klen])

    @property
    def extent(self) -> int:
        return len(self._chunks) << CHUNK_BITS

    @property
    def used_bytes(self) -> int:
        return ((len(self._chunks) - 1) << CHUNK_BITS) + self._tail
