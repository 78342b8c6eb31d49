"""Wire frames, status codes and the registered resize image.

All integers are little-endian.  Request frame (22-byte header)::

    0   kind        u8
    1   table_id    u32
    5   bucket      u32
    9   slot        i8    (-1 for MAKEUP_GET, 0 when unused)
    10  key_len     u16
    12  val_len     u16
    14  request_id  u64   (top 16 bits: origin compute node)
    22  key, value

Response frame (15-byte header)::

    0   request_id  u64
    8   status      u8
    9   flags       u8    (bit 0: new_seed valid, bit 1: resize notice)
    10  new_seed    u8
    11  payload_len u32
    15  payload     (KV block for reads, raw bytes for RESIZE_READ,
                     u64 previous value for RESIZE_FAA,
                     u64 resize epoch for FALSE_BUFFERED)

Registered image (what RESIZE_READ/RESIZE_FAA address)::

    0   N_cNode       u64   compute nodes still to acknowledge
    8   len           u64   bytes of body that follow offset 24
    16  Global_d      u64
    24  epoch u64, stale_table u32, table_count u32
        table_count x (table_id u32, local_depth u32, bucket_count u64)
        seeds of every new table, in table_id order
        serialized locator of every new table, in table_id order
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Sequence

from outback.errors import MalformedBytes, MalformedFrame
from outback.ludo import CompactIndex, TableIndex
from outback.othello import Locator

REQUEST_HEADER = struct.Struct("<BIIbHHQ")
RESPONSE_HEADER = struct.Struct("<QBBBI")
MAX_REQUEST = 600

FLAG_NEW_SEED = 0x01
FLAG_RESIZE_NOTICE = 0x02

NODE_SHIFT = 48
SEQ_MASK = (1 << NODE_SHIFT) - 1

RESIZE_RANGE = struct.Struct("<QQ")  # offset, length
RESIZE_ADD = struct.Struct("<Qq")  # offset, delta
CACHE_LINE = 64  # alignment for the optional frame padding
U64 = struct.Struct("<Q")


class Kind(enum.IntEnum):
    GET = 1
    MAKEUP_GET = 2
    INSERT = 3
    UPDATE = 4
    DELETE = 5
    RESIZE_READ = 6
    RESIZE_FAA = 7


class Status(enum.IntEnum):
    SUCCESS = 0
    NOT_FOUND = 1
    FALSE_BUFFERED = 2
    PRE_RESIZE = 3
    KEY_MISMATCH = 4
    TOO_LARGE = 5
    REFUSED = 6
    OUT_OF_RANGE = 7


WRITE_KINDS = frozenset({Kind.INSERT, Kind.UPDATE, Kind.DELETE})
RESIZE_KINDS = frozenset({Kind.RESIZE_READ, Kind.RESIZE_FAA})


def make_request_id(node_id: int, seq: int) -> int:
    if not 0 <= node_id < 1 << 16:
        raise ValueError("node id must fit 16 bits")
    return node_id << NODE_SHIFT | (seq & SEQ_MASK)


def origin_of(request_id: int) -> int:
    return request_id >> NODE_SHIFT


@dataclass(frozen=True)
class RequestFrame:
    kind: Kind
    table_id: int = 0
    bucket: int = 0
    slot: int = 0
    key: bytes = b""
    value: bytes = b""
    request_id: int = 0

    def with_id(self, request_id: int) -> RequestFrame:
        return RequestFrame(self.kind, self.table_id, self.bucket, self.slot, self.key, self.value, request_id)


@dataclass(frozen=True)
class ResponseFrame:
    request_id: int
    status: Status
    new_seed: int | None = None
    notice: bool = False
    payload: bytes = b""


def _check_request(f: RequestFrame) -> None:
    kind = f.kind
    if kind == Kind.GET:
        if f.key or f.value or not 0 <= f.slot < 4:
            raise MalformedFrame("GET carries only table, bucket and slot")
    elif kind == Kind.MAKEUP_GET:
        if f.slot != -1 or not f.key or f.value:
            raise MalformedFrame("MAKEUP_GET carries slot -1 and a key")
    elif kind == Kind.INSERT:
        if f.slot != 0 or not f.key:
            raise MalformedFrame("INSERT carries a bucket and a key")
    elif kind in (Kind.UPDATE, Kind.DELETE):
        if not f.key or not 0 <= f.slot < 4 or (kind == Kind.DELETE and f.value):
            raise MalformedFrame(f"{kind.name} carries a slot and a key")
    elif kind in RESIZE_KINDS:
        if f.key or len(f.value) != 16:
            raise MalformedFrame(f"{kind.name} carries a 16-byte operand")


def encode_request(f: RequestFrame) -> bytes:
    _check_request(f)
    size = REQUEST_HEADER.size + len(f.key) + len(f.value)
    if size > MAX_REQUEST:
        raise MalformedFrame(f"request of {size} bytes exceeds {MAX_REQUEST}")
    return REQUEST_HEADER.pack(f.kind, f.table_id, f.bucket, f.slot, len(f.key), len(f.value), f.request_id) + f.key + f.value


def pad_frame(raw: bytes, align: int) -> bytes:
    """Zero-fill ``raw`` to a multiple of ``align`` bytes (0 = no padding)."""
    return raw + bytes(-len(raw) % align) if align else raw


def _unpad(raw: bytes, size: int, align: int) -> bytes:
    if len(raw) == size:
        return raw
    if align and len(raw) % align == 0 and 0 < len(raw) - size < align and not any(raw[size:]):
        return raw[:size]
    raise MalformedFrame("declared lengths disagree with the frame size")


def decode_request(raw: bytes, align: int = 0) -> RequestFrame:
    if len(raw) < REQUEST_HEADER.size:
        raise MalformedFrame(f"request of {len(raw)} bytes is shorter than its header")
    kind, table_id, bucket, slot, klen, vlen, request_id = REQUEST_HEADER.unpack_from(raw)
    size = REQUEST_HEADER.size + klen + vlen
    if size > MAX_REQUEST:
        raise MalformedFrame(f"request of {size} bytes exceeds {MAX_REQUEST}")
    raw = _unpad(raw, size, align)
    try:
        kind = Kind(kind)
    except ValueError:
        raise MalformedFrame(f"unknown request kind {kind}") from None
    start = REQUEST_HEADER.size
    frame = RequestFrame(kind, table_id, bucket, slot, raw[start : start + klen], raw[start + klen :], request_id)
    _check_request(frame)
    return frame


def encode_response(f: ResponseFrame) -> bytes:
    flags = (FLAG_NEW_SEED if f.new_seed is not None else 0) | (FLAG_RESIZE_NOTICE if f.notice else 0)
    seed = f.new_seed if f.new_seed is not None else 0
    if not 0 <= seed < 256:
        raise MalformedFrame(f"seed {seed} exceeds 8 bits")
    return RESPONSE_HEADER.pack(f.request_id, f.status, flags, seed, len(f.payload)) + f.payload


def decode_response(raw: bytes, align: int = 0) -> ResponseFrame:
    if len(raw) < RESPONSE_HEADER.size:
        raise MalformedFrame(f"response of {len(raw)} bytes is shorter than its header")
    request_id, status, flags, seed, plen = RESPONSE_HEADER.unpack_from(raw)
    raw = _unpad(raw, RESPONSE_HEADER.size + plen, align)
    if flags & ~(FLAG_NEW_SEED | FLAG_RESIZE_NOTICE):
        raise MalformedFrame(f"unknown flag bits {flags:#x}")
    if not flags & FLAG_NEW_SEED and seed:
        raise MalformedFrame("seed byte set without its flag")
    try:
        status = Status(status)
    except ValueError:
        raise MalformedFrame(f"unknown status {status}") from None
    return ResponseFrame(
        request_id,
        status,
        seed if flags & FLAG_NEW_SEED else None,
        bool(flags & FLAG_RESIZE_NOTICE),
        raw[RESPONSE_HEADER.size :],
    )


def resize_read(offset: int, length: int, request_id: int = 0) -> RequestFrame:
    return RequestFrame(Kind.RESIZE_READ, value=RESIZE_RANGE.pack(offset, length), request_id=request_id)


def resize_faa(offset: int, delta: int, request_id: int = 0) -> RequestFrame:
    return RequestFrame(Kind.RESIZE_FAA, value=RESIZE_ADD.pack(offset, delta), request_id=request_id)


# --- registered resize image -------------------------------------------------

IMAGE_HEADER = struct.Struct("<QQQ")
IMAGE_BODY_OFFSET = IMAGE_HEADER.size
DESCRIPTOR_HEAD = struct.Struct("<QII")
TABLE_DESCRIPTOR = struct.Struct("<IIQ")


@dataclass
class ImageBody:
    epoch: int
    stale_table: int
    tables: list[TableIndex]


def encode_image_body(epoch: int, stale_table: int, tables: Sequence[TableIndex]) -> bytes:
    ordered = sorted(tables, key=lambda t: t.table_id)
    parts = [DESCRIPTOR_HEAD.pack(epoch, stale_table, len(ordered))]
    parts += [TABLE_DESCRIPTOR.pack(t.table_id, t.local_depth, t.bucket_count) for t in ordered]
    parts += [bytes(t.seeds) for t in ordered]
    parts += [t.locator.serialize() for t in ordered]
    return b"".join(parts)


def encode_image(n_cnode: int, global_depth: int, body: bytes) -> bytearray:
    return bytearray(IMAGE_HEADER.pack(n_cnode, len(body), global_depth) + body)


def decode_image_body(body: bytes) -> ImageBody:
    view = memoryview(body)
    if len(view) < DESCRIPTOR_HEAD.size:
        raise MalformedBytes("truncated image descriptor")
    epoch, stale, count = DESCRIPTOR_HEAD.unpack_from(view)
    pos = DESCRIPTOR_HEAD.size
    if len(view) < pos + count * TABLE_DESCRIPTOR.size:
        raise MalformedBytes("truncated table descriptors")
    descs = []
    for _ in range(count):
        descs.append(TABLE_DESCRIPTOR.unpack_from(view, pos))
        pos += TABLE_DESCRIPTOR.size
    seeds = []
    for _, _, bucket_count in descs:
        if len(view) < pos + bucket_count:
            raise MalformedBytes("truncated seed array")
        seeds.append(bytearray(view[pos : pos + bucket_count]))
        pos += bucket_count
    tables = []
    for (table_id, depth, bucket_count), seed_array in zip(descs, seeds):
        locator, pos = Locator.read_from(view, pos)
        tables.append(TableIndex(table_id, depth, bucket_count, locator, seed_array))
    if pos != len(view):
        raise MalformedBytes(f"{len(view) - pos} trailing bytes in image body")
    return ImageBody(epoch, stale, tables)


# --- compact index (bootstrap) ------------------------------------------------

INDEX_HEAD = struct.Struct("<QQII")  # epoch, global_depth, directory entries, tables


def encode_index(index: CompactIndex) -> bytes:
    tables = sorted(index.tables.values(), key=lambda t: t.table_id)
    parts = [INDEX_HEAD.pack(index.epoch, index.global_depth, len(index.directory), len(tables))]
    parts.append(struct.pack(f"<{len(index.directory)}I", *index.directory))
    for t in tables:
        parts.append(TABLE_DESCRIPTOR.pack(t.table_id, t.local_depth, t.bucket_count))
        parts.append(bytes(t.seeds))
        parts.append(t.locator.serialize())
    return b"".join(parts)


def decode_index(data: bytes) -> CompactIndex:
    view = memoryview(data)
    if len(view) < INDEX_HEAD.size:
        raise MalformedBytes("truncated index header")
    epoch, depth, entries, count = INDEX_HEAD.unpack_from(view)
    if entries != 1 << depth:
        raise MalformedBytes(f"directory of {entries} entries at depth {depth}")
    pos = INDEX_HEAD.size
    if len(view) < pos + 4 * entries:
        raise MalformedBytes("truncated directory")
    directory = list(struct.unpack_from(f"<{entries}I", view, pos))
    pos += 4 * entries
    tables: dict[int, TableIndex] = {}
    for _ in range(count):
        if len(view) < pos + TABLE_DESCRIPTOR.size:
            raise MalformedBytes("truncated table descriptor")
        table_id, local_depth, bucket_count = TABLE_DESCRIPTOR.unpack_from(view, pos)
        pos += TABLE_DESCRIPTOR.size
        if len(view) < pos + bucket_count:
            raise MalformedBytes("truncated seed array")
        seeds = bytearray(view[pos : pos + bucket_count])
        pos += bucket_count
        locator, pos = Locator.read_from(view, pos)
        tables[table_id] = TableIndex(table_id, local_depth, bucket_count, locator, seeds)
    if pos != len(view):
        raise MalformedBytes(f"{len(view) - pos} trailing bytes in index")
    if any(t not in tables for t in directory):
        raise MalformedBytes("directory names a missing table")
    return CompactIndex(depth, directory, tables, epoch)
