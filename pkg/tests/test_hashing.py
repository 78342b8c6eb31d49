from __future__ import annotations

import struct

import numpy as np
import pytest
import xxhash
from hypothesis import given
from hypothesis import strategies as st

from outback import _kernels, hashing
from outback.hashing import KeyBatch

M = (1 << 64) - 1
P1, P2, P3, P4, P5 = (
    0x9E3779B185EBCA87,
    0xC2B2AE3D27D4EB4F,
    0x165667B19E3779F9,
    0x85EBCA77C2B2AE63,
    0x27D4EB2F165667C5,
)


def _rotl(x, r):
    return ((x << r) | (x >> (64 - r))) & M


def _round(acc, lane):
    return _rotl((acc + lane * P2) & M, 31) * P1 & M


def ref_xxh64(data: bytes, seed: int) -> int:
    """Straight transcription of the published XXH64 algorithm."""
    n = len(data)
    p = 0
    if n >= 32:
        v = [(seed + P1 + P2) & M, (seed + P2) & M, seed, (seed - P1) & M]
        while p + 32 <= n:
            for j in range(4):
                v[j] = _round(v[j], struct.unpack_from("<Q", data, p + 8 * j)[0])
            p += 32
        h = (_rotl(v[0], 1) + _rotl(v[1], 7) + _rotl(v[2], 12) + _rotl(v[3], 18)) & M
        for lane in v:
            h = ((h ^ _round(0, lane)) * P1 + P4) & M
    else:
        h = (seed + P5) & M
    h = (h + n) & M
    while p + 8 <= n:
        h ^= _round(0, struct.unpack_from("<Q", data, p)[0])
        h = (_rotl(h, 27) * P1 + P4) & M
        p += 8
    if p + 4 <= n:
        h ^= struct.unpack_from("<I", data, p)[0] * P1 & M
        h = (_rotl(h, 23) * P2 + P3) & M
        p += 4
    while p < n:
        h ^= data[p] * P5 & M
        h = _rotl(h, 11) * P1 & M
        p += 1
    h ^= h >> 33
    h = h * P2 & M
    h ^= h >> 29
    h = h * P3 & M
    return h ^ (h >> 32)


def test_reference_matches_published_vectors():
    # XXH64 test vectors from the reference implementation's sanity checks
    assert ref_xxh64(b"", 0) == 0xEF46DB3751D8E999
    assert ref_xxh64(b"a", 0) == 0xD24EC4F1A98C6E5B
    assert ref_xxh64(b"abc", 0) == 0x44BC2CF5AD770999


@given(st.binary(max_size=80), st.integers(0, M))
def test_library_matches_reference(data, seed):
    assert xxhash.xxh64_intdigest(data, seed) == ref_xxh64(data, seed)


@given(st.lists(st.binary(min_size=1, max_size=70), min_size=1, max_size=20), st.integers(0, M))
def test_compiled_kernel_matches_library(keys, seed):
    batch = KeyBatch.of(keys)
    got = batch.digests(seed)
    assert [int(x) for x in got] == [xxhash.xxh64_intdigest(k, seed) for k in keys]
    mod = 1 + seed % 1000
    assert list(batch.reduced(seed, mod)) == [xxhash.xxh64_intdigest(k, seed) % mod for k in keys]


def test_role_seeds_are_distinct():
    seeds = [*hashing.BUCKET_SEEDS, hashing.LOCATOR_SEED_A, hashing.LOCATOR_SEED_B, hashing.FINGERPRINT_SEED,
             hashing.DIRECTORY_SEED, hashing.SLOT_SEED_BASE, hashing.RING_SEED]
    assert len(set(seeds)) == len(seeds)


def test_slot_of_frozen_value():
    # frozen after checking against ref_xxh64 with the widened seed
    assert hashing.slot_of(b"key-000042", 17) == ref_xxh64(b"key-000042", hashing.SLOT_SEED_BASE + 17) & 3
    assert hashing.slot_of(b"key-000042", 17) == 2


@given(st.binary(min_size=1, max_size=40), st.integers(0, 255))
def test_slot_and_fingerprint_ranges(key, seed):
    assert 0 <= hashing.slot_of(key, seed) < 4
    assert 0 <= hashing.fingerprint_of(key) < 64
    assert hashing.widen(seed) == (hashing.SLOT_SEED_BASE + seed) & M


def test_slot_of_is_uniform():
    # chi-square over 4 slots, 40000 (key, seed) samples; 3 dof, p = 0.001 critical value 16.27
    counts = np.zeros(4)
    for i in range(10000):
        key = b"u%d" % i
        for seed in (0, 1, 77, 255):
            counts[hashing.slot_of(key, seed)] += 1
    expected = counts.sum() / 4
    assert ((counts - expected) ** 2 / expected).sum() < 16.27


def test_fingerprint_collision_rate():
    # two random distinct keys share a 6-bit fingerprint with probability 1/64
    rng = np.random.default_rng(5)
    ids = rng.integers(0, 1 << 40, size=(20000, 2))
    hits = sum(hashing.fingerprint_of(b"%d" % a) == hashing.fingerprint_of(b"%d!" % b) for a, b in ids)
    assert abs(hits / 20000 - 1 / 64) < 0.004


def test_directory_index_takes_top_bits():
    key = b"dir"
    h = xxhash.xxh64_intdigest(key, hashing.DIRECTORY_SEED)
    assert hashing.directory_index(key, 0) == 0
    assert hashing.directory_index(key, 3) == h >> 61
    assert hashing.directory_index(key, 64) == h


def test_candidate_bucket_and_empty_key():
    assert hashing.candidate_bucket(b"k", 1, 10) == xxhash.xxh64_intdigest(b"k", hashing.BUCKET_SEEDS[1]) % 10
    with pytest.raises(ValueError):
        hashing.digest(b"", 0)
    with pytest.raises(ValueError):
        KeyBatch.of([b"a", b""])


def test_derive_seed_is_deterministic_and_spread():
    seeds = {hashing.derive_seed(hashing.LOCATOR_SEED_A, a) for a in range(32)}
    assert len(seeds) == 32
    assert hashing.derive_seed(1, 2) == hashing.derive_seed(1, 2)


def test_fixed_width_batch():
    raw = b"".join(i.to_bytes(8, "big") for i in range(10))
    batch = KeyBatch.fixed_width(raw, 8)
    assert len(batch) == 10
    assert batch.key(3) == (3).to_bytes(8, "big")
    assert int(batch.fingerprints()[3]) == hashing.fingerprint_of(batch.key(3))


def test_kernel_long_keys():
    data = bytes(range(256)) * 3
    buf = np.frombuffer(data, dtype=np.uint8)
    for length in (31, 32, 33, 63, 64, 65, 500):
        assert int(_kernels.xxh64(buf, 0, length, np.uint64(9))) == ref_xxh64(data[:length], 9)
