from __future__ import annotations

import numpy as np
import pytest
import xxhash
from hypothesis import given
from hypothesis import strategies as st

from outback import othello
from outback.errors import ConstructionFailed, MalformedBytes
from outback.hashing import KeyBatch

distinct_pairs = st.dictionaries(st.binary(min_size=1, max_size=12), st.integers(0, 1), max_size=300)


def _edges(locator, keys):
    return [
        (xxhash.xxh64_intdigest(k, locator.seed_a) % locator.m_a, xxhash.xxh64_intdigest(k, locator.seed_b) % locator.m_b)
        for k in keys
    ]


def _acyclic(edges, m_a, m_b):
    parent = list(range(m_a + m_b))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(m_a + b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


@given(distinct_pairs)
def test_query_returns_every_stored_bit(pairs):
    locator = othello.build(pairs.items())
    assert all(locator.query(k) == bit for k, bit in pairs.items())


@given(distinct_pairs)
def test_graph_of_built_locator_is_acyclic(pairs):
    locator = othello.build(pairs.items())
    assert _acyclic(_edges(locator, pairs), locator.m_a, locator.m_b)


@pytest.mark.parametrize("n", [0, 1, 2, 100, 1000, 12345])
def test_array_sizes(n):
    m_a, m_b = othello.array_sizes(n)
    assert m_a == max(1, -(-133 * n // 100)) and m_b == max(1, n)
    assert m_a + m_b <= 2.33 * n + 2


def test_bits_per_key_at_scale():
    n = 200_000
    raw = np.arange(n, dtype=">u8").tobytes()
    bits = (np.arange(n) % 3 == 0).astype(np.uint8)
    locator = othello.build_batch(KeyBatch.fixed_width(raw, 8), bits)
    assert locator.bits / n == pytest.approx(2.33, abs=0.001)
    sample = range(0, n, 997)
    assert all(locator.query(raw[8 * i : 8 * i + 8]) == bits[i] for i in sample)


def test_unknown_keys_get_a_bit():
    locator = othello.build([(b"a", 1), (b"b", 0)])
    assert locator.query(b"never-stored") in (0, 1)


def test_duplicate_keys_exhaust_retries():
    with pytest.raises(ConstructionFailed):
        othello.build([(b"same", 0), (b"same", 1)])


def test_rejects_non_bits():
    with pytest.raises(ValueError):
        othello.build([(b"a", 2)])


@given(distinct_pairs)
def test_serialization_round_trip(pairs):
    locator = othello.build(pairs.items(), version=7)
    clone = othello.Locator.deserialize(locator.serialize())
    assert clone == locator and clone.version == 7
    assert len(locator.serialize()) == locator.nbytes
    assert all(clone.query(k) == b for k, b in pairs.items())


def test_malformed_locator_bytes():
    data = othello.build([(b"x", 1)]).serialize()
    with pytest.raises(MalformedBytes):
        othello.Locator.deserialize(data[:-1])
    with pytest.raises(MalformedBytes):
        othello.Locator.deserialize(data + b"\0")
    with pytest.raises(MalformedBytes):
        othello.Locator.deserialize(data[:10])
    with pytest.raises(MalformedBytes):
        othello.Locator.deserialize(bytes(40) + b"\0\0")


def test_layout_of_serialized_header():
    locator = othello.build([(b"k1", 1), (b"k2", 0), (b"k3", 1)])
    data = locator.serialize()
    assert int.from_bytes(data[0:8], "little") == 4  # ceil(1.33 * 3)
    assert int.from_bytes(data[8:16], "little") == 3
    assert len(data) == 40 + 1 + 1
