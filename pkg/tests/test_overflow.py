from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from outback.memnode.overflow import FallbackTable, OverflowCache

ops = st.lists(st.tuples(st.sampled_from(["put", "pop"]), st.integers(0, 300), st.integers(0, 1 << 40)), max_size=400)


@given(ops)
def test_fallback_matches_dict(seq):
    table = FallbackTable()
    model: dict[bytes, tuple[int, int]] = {}
    for op, k, addr in seq:
        key = b"f%d" % k
        if op == "put":
            table.put(key, addr, k % 500)
            model[key] = (addr, k % 500)
        else:
            assert table.pop(key) == model.pop(key, None)
    assert len(table) == len(model)
    assert dict(table.items()) == model
    assert all(table.get(k) == v for k, v in model.items())
    assert table.get(b"absent") is None


def test_fallback_grows():
    table = FallbackTable(bucket_count=1)
    for i in range(200):
        table.put(b"g%d" % i, i, 1)
    assert len(table) == 200 and all(table.get(b"g%d" % i) == (i, 1) for i in range(200))


def test_cache_bucket_index():
    cache = OverflowCache(8)
    cache.put(b"a", 3, 10, 20)
    cache.put(b"b", 3, 11, 20)
    cache.put(b"c", 4, 12, 20)
    assert cache.keys_in(3) == {b"a", b"b"} and len(cache) == 3
    assert cache.pop(b"a").address == 10
    assert cache.keys_in(3) == {b"b"}
    cache.pop(b"b")
    assert cache.keys_in(3) == set() and b"b" not in cache
    assert cache.pop(b"zzz") is None
    assert cache.key_bytes() == 1
