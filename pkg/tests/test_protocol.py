from __future__ import annotations

import os
import struct
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from outback.errors import MalformedBytes, MalformedFrame
from outback.memnode.engine import MemNode, Phase
from outback.protocol import (
    CACHE_LINE,
    IMAGE_BODY_OFFSET,
    MAX_REQUEST,
    Kind,
    RequestFrame,
    ResponseFrame,
    Status,
    decode_image_body,
    decode_index,
    decode_request,
    decode_response,
    encode_image_body,
    encode_index,
    encode_request,
    encode_response,
    make_request_id,
    origin_of,
    pad_frame,
    resize_faa,
    resize_read,
)

GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("OUTBACK_REGEN_GOLDEN") == "1"

RID = make_request_id(3, 0x2A)
BLOCK = struct.pack("<QQ", 3, 5) + b"key" + b"value"

REQUESTS = {
    "req_get": RequestFrame(Kind.GET, 0, 10, 0, request_id=RID),
    "req_makeup_get": RequestFrame(Kind.MAKEUP_GET, 2, 7, -1, b"key-7", request_id=RID),
    "req_insert": RequestFrame(Kind.INSERT, 1, 300, 0, b"key-1", b"value-1", request_id=RID),
    "req_update": RequestFrame(Kind.UPDATE, 1, 300, 3, b"key-1", b"value-2", request_id=RID),
    "req_delete": RequestFrame(Kind.DELETE, 1, 300, 2, b"key-1", request_id=RID),
    "req_resize_read": resize_read(0, 24, request_id=RID),
    "req_resize_faa": resize_faa(0, -1, request_id=RID),
}
RESPONSES = {
    "resp_get_hit": ResponseFrame(RID, Status.SUCCESS, payload=BLOCK),
    "resp_get_miss": ResponseFrame(RID, Status.NOT_FOUND),
    "resp_makeup_seed": ResponseFrame(RID, Status.SUCCESS, new_seed=0x9C, payload=BLOCK),
    "resp_insert_reseed": ResponseFrame(RID, Status.SUCCESS, new_seed=17),
    "resp_pre_resize": ResponseFrame(RID, Status.PRE_RESIZE, notice=True),
    "resp_buffered": ResponseFrame(RID, Status.FALSE_BUFFERED, payload=struct.pack("<Q", 1)),
    "resp_too_large": ResponseFrame(RID, Status.TOO_LARGE),
    "resp_refused": ResponseFrame(RID, Status.REFUSED),
    "resp_key_mismatch": ResponseFrame(RID, Status.KEY_MISMATCH),
    "resp_out_of_range": ResponseFrame(RID, Status.OUT_OF_RANGE),
    "resp_faa": ResponseFrame(RID, Status.SUCCESS, payload=struct.pack("<Q", 2)),
}


def scripted_image() -> bytes:
    """Registered image of a fixed eight-key split, read once both nodes know about it."""
    mn = MemNode(min_buckets=2, background_resize=False, compute_nodes=2, notify_timeout=3600.0)
    keys = [b"golden-%d" % i for i in range(8)]
    mn.bulk_load(keys, [b"v%d" % i for i in range(8)])
    mn.trigger_resize(0)
    for node in (0, 1):  # the first response to each node carries the notice
        assert mn.dispatch(RequestFrame(Kind.GET, 0, 0, 0, request_id=make_request_id(node, 1))).notice
    assert mn.step_resize() is Phase.PUBLISHED
    length = int.from_bytes(mn.resize_read(8, 8), "little")
    image = mn.resize_read(0, IMAGE_BODY_OFFSET + length)
    mn.close()
    return image


def bootstrap_index() -> bytes:
    mn = MemNode(min_buckets=2, background_resize=False)
    index = mn.bulk_load([b"golden-%d" % i for i in range(8)], [b"v"] * 8)
    return encode_index(index)


def golden(name: str, data: bytes) -> bytes:
    path = GOLDEN / f"{name}.bin"
    if REGEN:
        GOLDEN.mkdir(exist_ok=True)
        path.write_bytes(data)
    return path.read_bytes()


@pytest.mark.parametrize("name", sorted(REQUESTS))
def test_request_golden(name):
    raw = encode_request(REQUESTS[name])
    assert raw == golden(name, raw)
    assert decode_request(raw) == REQUESTS[name]


@pytest.mark.parametrize("name", sorted(RESPONSES))
def test_response_golden(name):
    raw = encode_response(RESPONSES[name])
    assert raw == golden(name, raw)
    assert decode_response(raw) == RESPONSES[name]


def test_image_golden():
    image = scripted_image()
    assert image == golden("image", image)
    n_cnode, length, depth = struct.unpack_from("<QQQ", image)
    assert (n_cnode, depth, length) == (2, 1, len(image) - 24)
    body = decode_image_body(image[24:])
    assert body.stale_table == 0 and [t.table_id for t in body.tables] == [1, 2]
    assert encode_image_body(body.epoch, body.stale_table, body.tables) == image[24:]


def test_index_golden():
    data = bootstrap_index()
    assert data == golden("index", data)
    assert encode_index(decode_index(data)) == data


def test_get_frame_bytes_by_hand():
    expected = bytes.fromhex(
        "01"  # kind GET
        "00000000"  # table 0
        "0a000000"  # bucket 10
        "00"  # slot 0
        "0000" "0000"  # no key, no value
        "2a00000000000300"  # request id: node 3, sequence 42
    )
    assert len(expected) == 22
    assert encode_request(REQUESTS["req_get"]) == expected


def test_makeup_and_response_bytes_by_hand():
    raw = encode_request(REQUESTS["req_makeup_get"])
    assert raw[:10] == bytes.fromhex("02" "02000000" "07000000" "ff")
    assert raw[10:14] == bytes.fromhex("0500" "0000") and raw[22:] == b"key-7"
    resp = encode_response(RESPONSES["resp_makeup_seed"])
    assert resp[:15] == bytes.fromhex("2a00000000000300" "00" "01" "9c" "18000000")
    assert encode_response(RESPONSES["resp_pre_resize"]) == bytes.fromhex("2a00000000000300" "03" "02" "00" "00000000")


requests = st.one_of(
    st.builds(lambda t, b, s: RequestFrame(Kind.GET, t, b, s), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 3)),
    st.builds(lambda t, b, k: RequestFrame(Kind.MAKEUP_GET, t, b, -1, k), st.integers(0, 9), st.integers(0, 999), st.binary(min_size=1, max_size=60)),
    st.builds(lambda b, k, v: RequestFrame(Kind.INSERT, 0, b, 0, k, v), st.integers(0, 999), st.binary(min_size=1, max_size=60), st.binary(max_size=200)),
    st.builds(lambda s, k, v: RequestFrame(Kind.UPDATE, 0, 1, s, k, v), st.integers(0, 3), st.binary(min_size=1, max_size=60), st.binary(max_size=200)),
    st.builds(lambda s, k: RequestFrame(Kind.DELETE, 0, 1, s, k), st.integers(0, 3), st.binary(min_size=1, max_size=60)),
    st.builds(resize_read, st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1)),
    st.builds(resize_faa, st.integers(0, 2**64 - 1), st.integers(-(2**63), 2**63 - 1)),
)


@given(requests, st.integers(0, 2**64 - 1))
def test_request_round_trip(frame, request_id):
    frame = frame.with_id(request_id)
    raw = encode_request(frame)
    assert decode_request(raw) == frame
    padded = pad_frame(raw, CACHE_LINE)
    assert len(padded) % CACHE_LINE == 0 and decode_request(padded, CACHE_LINE) == frame
    if frame.kind is Kind.GET:
        assert len(raw) == 22


@given(
    st.integers(0, 2**64 - 1),
    st.sampled_from(list(Status)),
    st.none() | st.integers(0, 255),
    st.booleans(),
    st.binary(max_size=600),
)
def test_response_round_trip(rid, status, seed, notice, payload):
    frame = ResponseFrame(rid, status, seed, notice, payload)
    assert decode_response(encode_response(frame)) == frame
    assert decode_response(pad_frame(encode_response(frame), CACHE_LINE), CACHE_LINE) == frame


def test_request_id_carries_origin():
    assert origin_of(make_request_id(513, 7)) == 513
    with pytest.raises(ValueError):
        make_request_id(1 << 16, 0)


@pytest.mark.parametrize(
    "frame",
    [
        RequestFrame(Kind.GET, 0, 0, 0, b"k"),  # GET carries no key
        RequestFrame(Kind.GET, 0, 0, 4),
        RequestFrame(Kind.MAKEUP_GET, 0, 0, 0, b"k"),
        RequestFrame(Kind.MAKEUP_GET, 0, 0, -1),
        RequestFrame(Kind.INSERT, 0, 0, 1, b"k"),
        RequestFrame(Kind.DELETE, 0, 0, 1, b"k", b"v"),
        RequestFrame(Kind.UPDATE, 0, 0, -1, b"k", b"v"),
        RequestFrame(Kind.RESIZE_READ, value=b"short"),
    ],
)
def test_invalid_frames_are_rejected(frame):
    with pytest.raises(MalformedFrame):
        encode_request(frame)


def test_size_limit():
    key = b"k" * 10
    ok = RequestFrame(Kind.INSERT, 0, 0, 0, key, b"v" * (MAX_REQUEST - 22 - len(key)))
    assert len(encode_request(ok)) == MAX_REQUEST
    with pytest.raises(MalformedFrame):
        encode_request(RequestFrame(Kind.INSERT, 0, 0, 0, key, b"v" * (MAX_REQUEST - 21 - len(key))))
    oversized = struct.pack("<BIIbHHQ", 3, 0, 0, 0, 1, MAX_REQUEST, 0) + b"k" + bytes(MAX_REQUEST)
    with pytest.raises(MalformedFrame):
        decode_request(oversized)


def test_truncated_and_garbled_frames():
    raw = encode_request(REQUESTS["req_insert"])
    for cut in (0, 5, 21, len(raw) - 1):
        with pytest.raises(MalformedFrame):
            decode_request(raw[:cut])
    with pytest.raises(MalformedFrame):
        decode_request(raw + b"\x00")  # trailing bytes without padding enabled
    with pytest.raises(MalformedFrame):
        decode_request(bytes([9]) + raw[1:])
    with pytest.raises(MalformedFrame):
        decode_request(pad_frame(raw, 64)[:-1] + b"\x01", 64)  # non-zero padding
    resp = encode_response(RESPONSES["resp_get_hit"])
    with pytest.raises(MalformedFrame):
        decode_response(resp[:14])
    with pytest.raises(MalformedFrame):
        decode_response(resp[:-1])
    with pytest.raises(MalformedFrame):
        decode_response(resp[:8] + bytes([99]) + resp[9:])
    with pytest.raises(MalformedFrame):
        decode_response(resp[:9] + b"\x04" + resp[10:])  # unknown flag
    with pytest.raises(MalformedFrame):
        decode_response(resp[:10] + b"\x05" + resp[11:])  # seed without flag


def test_truncated_image_and_index():
    image = golden("image", scripted_image()) if REGEN else (GOLDEN / "image.bin").read_bytes()
    body = image[24:]
    for cut in (0, 10, 40, len(body) - 1):
        with pytest.raises(MalformedBytes):
            decode_image_body(body[:cut])
    with pytest.raises(MalformedBytes):
        decode_image_body(body + b"\x00")
    index = (GOLDEN / "index.bin").read_bytes()
    with pytest.raises(MalformedBytes):
        decode_index(index[:-1])
    with pytest.raises(MalformedBytes):
        decode_index(index[:8] + (5).to_bytes(8, "little") + index[16:])  # depth disagrees with directory
