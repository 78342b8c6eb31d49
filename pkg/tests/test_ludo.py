from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from outback import ludo
from outback.errors import AssignmentFailed, NoSeed
from outback.hashing import SEED_SPACE, KeyBatch, candidate_bucket, slot_of
from outback.othello import build as build_locator

key_sets = st.sets(st.binary(min_size=1, max_size=10), max_size=400).map(sorted)


def brute_force_seed(keys):
    for seed in range(SEED_SPACE):
        if len({slot_of(k, seed) for k in keys}) == len(keys):
            return seed
    return None


@given(st.sets(st.binary(min_size=1, max_size=8), min_size=0, max_size=4).map(sorted))
def test_find_seed_is_smallest_separating_seed(keys):
    expected = brute_force_seed(keys)
    assert ludo.find_seed(keys) == expected
    assert len({slot_of(k, expected) for k in keys}) == len(keys)


def test_find_seed_rejects_five_keys():
    with pytest.raises(ValueError):
        ludo.find_seed([b"a", b"b", b"c", b"d", b"e"])


def test_no_seed_when_keys_collide_everywhere():
    with pytest.raises(NoSeed):
        ludo.find_seed([b"same", b"same"])


@given(key_sets)
def test_assignment_respects_candidates_and_capacity(keys):
    buckets = max(1, -(-len(keys) // 3))
    a = ludo.assign_buckets(keys, buckets)
    assert a.counts.max(initial=0) <= 4
    assert a.counts.sum() == len(keys)
    for i, k in enumerate(keys):
        b = int(a.buckets[i])
        assert b == candidate_bucket(k, int(a.choices[i]), buckets)
        assert i in a.members[4 * b : 4 * b + 4]


def test_assignment_fails_when_overfull():
    with pytest.raises(AssignmentFailed):
        ludo.assign_buckets([b"%d" % i for i in range(9)], 2)


def test_assignment_occupancy_histogram():
    keys = [b"h%d" % i for i in range(4000)]
    a = ludo.assign_buckets(keys, 1053)
    hist = a.occupancy()
    assert hist.sum() == 1053 and (hist * np.arange(5)).sum() == 4000
    # two-choice placement keeps most buckets full at 95% load
    assert hist[4] > 0.8 * 1053


@given(key_sets)
def test_construction_is_collision_free(keys):
    payload = np.arange(1, len(keys) + 1, dtype=np.uint64)
    built = ludo.construct(keys, payload, 0.9)
    index = ludo.TableIndex(0, 0, built.bucket_count, built.locator, built.seeds)
    placed = [i for i in range(len(keys)) if built.slot_of_key[i] >= 0]
    assert len(placed) + built.fallback.size == len(keys)
    slots = {built.slot_of_key[i] for i in placed}
    assert len(slots) == len(placed)
    for i in placed:
        b, s = index.locate(keys[i])
        assert b * 4 + s == built.slot_of_key[i]
        assert built.slots[b * 4 + s] == i + 1
    assert np.count_nonzero(built.slots) == len(placed)


def test_construction_at_scale_uses_no_fallback():
    n = 100_000
    batch = KeyBatch.fixed_width(np.arange(1, n + 1, dtype=">u8").tobytes(), 8)
    built = ludo.construct(batch, None, 0.95)
    assert built.fallback.size == 0
    assert built.bucket_count == 26316  # ceil(100000 / 3.8)
    assert built.compute_bits <= 1.25 * (2.33 + 2 / 0.95) * n


def test_bucket_count_for():
    assert ludo.bucket_count_for(0, 0.95) == 1
    assert ludo.bucket_count_for(380, 0.95) == 100
    with pytest.raises(ValueError):
        ludo.bucket_count_for(10, 0)


def test_fallback_limit_is_enforced():
    with pytest.raises(AssignmentFailed):
        ludo.construct([b"%d" % i for i in range(3)] + [b"x", b"x"], bucket_count=2, fallback_limit=0)


def test_locate_narrative_with_injected_state():
    # key 5 is steered to bucket 10 / slot 0 by choosing its locator bit and the bucket seed
    key = b"5"
    buckets = next(b for b in range(16, 400) if 10 in (candidate_bucket(key, 0, b), candidate_bucket(key, 1, b)))
    choice = 0 if candidate_bucket(key, 0, buckets) == 10 else 1
    seed = next(s for s in range(256) if slot_of(key, s) == 0)
    seeds = bytearray(buckets)
    seeds[10] = seed
    index = ludo.TableIndex(0, 0, buckets, build_locator([(key, choice)]), seeds)
    assert index.locate(key) == (10, 0)


def test_split_directory_doubles_and_assigns_halves():
    directory, depth = ludo.split_directory([0], 0, 0, (1, 2), 1)
    assert (directory, depth) == ([1, 2], 1)
    directory, depth = ludo.split_directory([1, 2], 1, 2, (3, 4), 2)
    assert (directory, depth) == ([1, 1, 3, 4], 2)
    # splitting a shallow table inside a deep directory does not double it
    directory, depth = ludo.split_directory([1, 1, 3, 4], 2, 1, (5, 6), 2)
    assert (directory, depth) == ([5, 6, 3, 4], 2)


@given(st.binary(min_size=1, max_size=12), st.integers(1, 8))
def test_split_bit_agrees_with_directory(key, depth):
    from outback.hashing import directory_index

    assert ludo.split_bit(key, depth) == directory_index(key, depth) & 1


def test_compact_index_routes_through_directory():
    tables = {}
    for tid in (1, 2):
        built = ludo.construct([b"a%d" % tid], None, 0.5)
        tables[tid] = ludo.TableIndex(tid, 1, built.bucket_count, built.locator, built.seeds)
    index = ludo.CompactIndex(1, [1, 2], tables)
    for i in range(50):
        key = b"route%d" % i
        from outback.hashing import directory_index

        assert index.table_for(key).table_id == (1, 2)[directory_index(key, 1)]
    assert index.apply_seed(1, 0, 9) and not index.apply_seed(1, 0, 9)
    assert not index.apply_seed(99, 0, 1)
    assert index.size_bits == sum(t.size_bits for t in tables.values()) + 64


def test_compact_index_split_shares_untouched_tables():
    t = {i: ludo.TableIndex(i, 1, 1, build_locator([]), bytearray(1)) for i in (1, 2)}
    index = ludo.CompactIndex(1, [1, 2], t, epoch=3)
    new = [ludo.TableIndex(i, 2, 1, build_locator([]), bytearray(1)) for i in (3, 4)]
    split = index.split(2, new, 2, 4)
    assert split.directory == [1, 1, 3, 4] and split.epoch == 4
    assert split.tables[1] is t[1]
    with pytest.raises(ValueError):
        index.split(2, new, 3, 4)
