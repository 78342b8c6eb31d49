from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from outback.errors import BlockTooLarge, MalformedBytes, OutOfRange
from outback.memnode import layout
from outback.memnode.layout import CHUNK_SIZE, KvLog, SlotEntry


@given(st.booleans(), st.integers(0, 63), st.integers(0, 511), st.integers(0, (1 << 48) - 1))
def test_slot_word_round_trip(cache, fp, length, address):
    word = SlotEntry(cache, fp, length, address).pack()
    assert 0 <= word < 1 << 64
    assert SlotEntry.unpack(word) == (cache, fp, length, address)
    moved = layout.repoint(word, 12345, 40)
    assert SlotEntry.unpack(moved) == (cache, fp, 40, 12345)


def test_slot_word_bit_positions():
    assert SlotEntry(True, 0, 0, 0).pack() == 1 << 63
    assert SlotEntry(False, 1, 0, 0).pack() == 1 << 57
    assert SlotEntry(False, 0, 1, 0).pack() == 1 << 48
    assert SlotEntry(False, 0, 0, 1).pack() == 1
    assert SlotEntry.unpack(0).empty


@pytest.mark.parametrize("fields", [(False, 64, 0, 0), (False, 0, 512, 0), (False, 0, 0, 1 << 48)])
def test_slot_field_overflow(fields):
    with pytest.raises(ValueError):
        layout.pack_slot(*fields)


@given(st.binary(min_size=1, max_size=100), st.binary(max_size=100))
def test_block_round_trip(key, value):
    raw = layout.encode_block(key, value)
    assert len(raw) == 16 + len(key) + len(value)
    assert layout.decode_block(raw) == (key, value)
    assert layout.block_key(raw) == key


def test_block_size_limit():
    assert len(layout.encode_block(b"k", bytes(511 - 17))) == 511
    with pytest.raises(BlockTooLarge):
        layout.encode_block(b"k", bytes(511 - 16))
    with pytest.raises(MalformedBytes):
        layout.decode_block(layout.encode_block(b"k", b"v") + b"x")
    with pytest.raises(MalformedBytes):
        layout.decode_block(b"short")


def test_log_append_and_read_across_chunks():
    log = KvLog()
    blocks = [layout.encode_block(b"key%d" % i, bytes(400)) for i in range(3000)]
    addresses = [log.append(b) for b in blocks]
    assert log.extent >= log.used_bytes > CHUNK_SIZE
    for a, b in zip(addresses, blocks):
        assert a + len(b) <= log.extent
        assert log.read(a, len(b)) == b
        assert (a & (CHUNK_SIZE - 1)) + len(b) <= CHUNK_SIZE  # blocks never straddle chunks
    assert log.read_key(addresses[5]) == b"key5"
    with pytest.raises(OutOfRange):
        log.read(log.extent, 10)
    with pytest.raises(BlockTooLarge):
        log.append(bytes(512))
