"""Memory-node request handlers and the resize state machine.

Reads on the fast path touch exactly one slot word and one log block.
Writes hold a per-bucket stripe lock.  While a table is being split,
inserts and deletes aimed at it are buffered and replayed once every
compute node has fetched the new locators; updates are applied to
whichever copy the client addressed and mirrored into the other.
"""

from __future__ import annotations

import enum
import logging
import math
import threading
import time
from array import array
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from outback import ludo
from outback.errors import BlockTooLarge, NoSeed, OutbackError, OutOfRange
from outback.hashing import SLOTS_PER_BUCKET, KeyBatch, candidate_bucket, fingerprint_of, slot_of
from outback.memnode.layout import (
    ADDR_MASK,
    CACHE_BIT,
    FP_SHIFT,
    LEN_FIELD,
    LEN_SHIFT,
    KvLog,
    encode_block,
    repoint,
    slot_length,
)
from outback.memnode.table import MemTable
from outback.protocol import (
    IMAGE_HEADER,
    U64,
    Kind,
    RequestFrame,
    ResponseFrame,
    Status,
    encode_image,
    encode_image_body,
    encode_index,
    decode_index,
    origin_of,
)

log = logging.getLogger(__name__)

LOC_CACHE = -1
LOC_FALLBACK = -2
_STRIPES = 128
_NOT_LEN = ~LEN_FIELD & (1 << 64) - 1


class Phase(enum.Enum):
    IDLE = "idle"
    PRE_RESIZE = "pre_resize"
    BUILDING = "building"
    PUBLISHED = "published"
    DRAINING = "draining"


class Outcome(enum.Enum):
    INSERTED = "inserted"
    UPDATED = "updated"
    CACHED = "cached"
    BUFFERED = "buffered"
    REFUSED = "refused"


@dataclass
class Reply:
    status: Status
    payload: bytes = b""
    new_seed: int | None = None
    outcome: Outcome | None = None


@dataclass
class MemNodeConfig:
    load_factor: float = 0.95
    cache_capacity: int = 4096
    compute_nodes: int = 1
    resize_enabled: bool = True
    background_resize: bool = True
    finalize_interval: float = 0.5
    notify_timeout: float = 1.0
    slow_load: float = 0.97
    min_buckets: int = 256

    @property
    def slow_cache(self) -> int:
        return math.ceil(self.cache_capacity / 2)

    @property
    def stop_cache(self) -> int:
        return math.ceil(0.9 * self.cache_capacity)


class RegisteredImage:
    """Byte region served to compute nodes by RESIZE_READ and RESIZE_FAA."""

    def __init__(self, data: bytearray):
        self._data = data
        self._lock = threading.Lock()

    def read(self, offset: int, length: int) -> bytes:
        with self._lock:
            if offset < 0 or length < 0 or offset + length > len(self._data):
                raise OutOfRange(f"image read {offset}+{length} past {len(self._data)} bytes")
            return bytes(self._data[offset : offset + length])

    def faa(self, offset: int, delta: int) -> int:
        with self._lock:
            if offset % 8 or not 0 <= offset <= len(self._data) - 8:
                raise OutOfRange(f"image FAA at {offset}")
            (old,) = U64.unpack_from(self._data, offset)
            U64.pack_into(self._data, offset, (old + delta) & (1 << 64) - 1)
            return old

    def load(self, offset: int) -> int:
        with self._lock:
            return U64.unpack_from(self._data, offset)[0]

    def replace(self, data: bytearray) -> None:
        with self._lock:
            self._data = data

    def __len__(self) -> int:
        return len(self._data)


@dataclass
class BufferedOp:
    kind: Kind
    table_id: int
    bucket: int
    slot: int
    key: bytes
    value: bytes


@dataclass
class ResizeState:
    epoch: int
    stale_id: int
    started: float
    phase: Phase = Phase.PRE_RESIZE
    notified: set[int] = field(default_factory=set)
    new_ids: tuple[int, ...] = ()
    new_locators: dict[int, "ludo.Locator"] = field(default_factory=dict)
    pending: deque[BufferedOp] = field(default_factory=deque)
    pending_keys: set[bytes] = field(default_factory=set)
    dirty: dict[bytes, tuple[int, int]] = field(default_factory=dict)
    mirroring: bool = False
    mirror_lock: threading.Lock = field(default_factory=threading.Lock)
    timeline: dict[str, float] = field(default_factory=dict)
    buffered_total: int = 0

    def targets(self, table_id: int) -> bool:
        return table_id == self.stale_id or table_id in self.new_ids


class MemNode:
    def __init__(self, config: MemNodeConfig | None = None, **overrides):
        cfg = config or MemNodeConfig()
        for name, value in overrides.items():
            if not hasattr(cfg, name):
                raise TypeError(f"unknown memnode option {name!r}")
            setattr(cfg, name, value)
        self.config = cfg
        self.log = KvLog()
        self.tables: dict[int, MemTable] = {}
        self.global_depth = 0
        self.directory: list[int] = [0]
        self._next_table_id = 0
        self._stripes = [threading.Lock() for _ in range(_STRIPES)]
        self._gate = threading.Condition()
        self._active_writes = 0
        self._resize: ResizeState | None = None
        self._image: RegisteredImage | None = None
        self._epoch = 0
        self._kick = threading.Event()
        self._closed = False
        self._watcher: threading.Thread | None = None
        self._bootstrap: bytes | None = None
        self.requests: Counter[Kind] = Counter()
        self.resizes: list[dict[str, float]] = []
        self.create_table(cfg.min_buckets)

    # --- setup -----------------------------------------------------------------

    def create_table(self, bucket_count: int) -> ludo.CompactIndex:
        """Reset to a single empty table of ``bucket_count`` buckets."""
        return self.bulk_load([], [], bucket_count=bucket_count)

    def bulk_load(
        self,
        keys: Sequence[bytes],
        values: Sequence[bytes],
        load_factor: float | None = None,
        *,
        bucket_count: int | None = None,
    ) -> ludo.CompactIndex:
        """Replace all contents with ``keys`` -> ``values``; returns the compute half."""
        if len(keys) != len(values):
            raise ValueError("one value per key")
        if self._resize is not None:
            raise OutbackError("cannot bulk load during a resize")
        lf = load_factor or self.config.load_factor
        if bucket_count is None:
            bucket_count = max(self.config.min_buckets, ludo.bucket_count_for(len(keys), lf))
        batch = KeyBatch.of(keys)
        addresses = np.empty(len(keys), dtype=np.uint64)
        lengths = np.empty(len(keys), dtype=np.uint64)
        for i, (key, value) in enumerate(zip(keys, values)):
            block = encode_block(key, value)
            addresses[i] = self.log.append(block)
            lengths[i] = len(block)
        payloads = batch.fingerprints() << np.uint64(FP_SHIFT) | lengths << np.uint64(LEN_SHIFT) | addresses
        built = ludo.construct(batch, payloads, lf, bucket_count=bucket_count)
        table = self._table_from(built, table_id=0, local_depth=0)
        for i in built.fallback:
            table.fallback.put(keys[int(i)], int(addresses[i]), int(lengths[i]))
        self.tables = {0: table}
        self.global_depth = 0
        self.directory = [0]
        self._next_table_id = 1
        index = ludo.CompactIndex(0, [0], {0: ludo.TableIndex(0, 0, built.bucket_count, built.locator, bytearray(built.seeds))})
        self._bootstrap = encode_index(index)
        return index

    def _table_from(self, built: ludo.Construction, table_id: int, local_depth: int) -> MemTable:
        slots = array("Q")
        slots.frombytes(built.slots.tobytes())
        return MemTable(table_id, local_depth, built.bucket_count, self.config.cache_capacity, slots, bytearray(built.seeds))

    def export_index(self) -> ludo.CompactIndex:
        """Fresh copy of the compute half produced by the last bulk load."""
        if self._bootstrap is None:
            raise OutbackError("the bootstrap index is stale after a resize")
        return decode_index(self._bootstrap)

    # --- metrics ----------------------------------------------------------------

    @property
    def epoch(self) -> int:
        """Epoch of the most recent resize, counted from when it starts."""
        return self._epoch

    @property
    def phase(self) -> Phase:
        rs = self._resize
        return Phase.IDLE if rs is None else rs.phase

    @property
    def image(self) -> RegisteredImage | None:
        return self._image

    @property
    def key_count(self) -> int:
        return sum(t.key_count for t in self.tables.values())

    def index_bits(self) -> int:
        return sum(t.index_bits() for t in self.tables.values())

    def cache_size(self) -> int:
        return sum(len(t.cache) for t in self.tables.values())

    # --- fast path ----------------------------------------------------------------

    def handle_get(self, table_id: int, bucket: int, slot: int) -> bytes | None:
        """Block stored at one slot, or None for an empty slot.  No hashing, no key check."""
        table = self.tables.get(table_id)
        if table is None or not 0 <= bucket < table.bucket_count or not 0 <= slot < SLOTS_PER_BUCKET:
            raise OutOfRange(f"no slot {table_id}/{bucket}/{slot}")
        word = table.slots[bucket * SLOTS_PER_BUCKET + slot]
        length = (word >> LEN_SHIFT) & 0x1FF
        if not length:
            return None
        return self.log.read(word & ADDR_MASK, length)

    # --- helpers ----------------------------------------------------------------------

    def _table(self, table_id: int, bucket: int) -> MemTable:
        table = self.tables.get(table_id)
        if table is None or not 0 <= bucket < table.bucket_count:
            raise OutOfRange(f"no bucket {table_id}/{bucket}")
        return table

    def _stripe(self, table_id: int, bucket: int) -> threading.Lock:
        return self._stripes[(table_id * 0x9E3779B1 + bucket) % _STRIPES]

    def _locate_key(self, table: MemTable, bucket: int, key: bytes, fp: int, hint: int = -1) -> int | None:
        """Flat slot index, LOC_CACHE, LOC_FALLBACK, or None."""
        base = bucket * SLOTS_PER_BUCKET
        slots = table.slots
        order = (hint, *(s for s in range(SLOTS_PER_BUCKET) if s != hint)) if 0 <= hint < 4 else range(4)
        for s in order:
            word = slots[base + s]
            if (word & LEN_FIELD) and (word >> FP_SHIFT) & 0x3F == fp and self.log.read_key(word & ADDR_MASK) == key:
                return base + s
        if key in table.cache:
            return LOC_CACHE
        if key in table.fallback:
            return LOC_FALLBACK
        return None

    def _find_anywhere(self, table: MemTable, key: bytes) -> int | None:
        fp = fingerprint_of(key)
        for choice in (0, 1):
            loc = self._locate_key(table, candidate_bucket(key, choice, table.bucket_count), key, fp)
            if loc is not None:
                return loc
        return None

    def _read_loc(self, table: MemTable, loc: int, key: bytes) -> bytes:
        if loc >= 0:
            word = table.slots[loc]
            return self.log.read(word & ADDR_MASK, slot_length(word))
        if loc == LOC_CACHE:
            entry = table.cache.get(key)
            return self.log.read(entry.address, entry.length)
        address, length = table.fallback.get(key)
        return self.log.read(address, length)

    def _repoint(self, table: MemTable, loc: int, key: bytes, address: int, length: int) -> None:
        if loc >= 0:
            table.slots[loc] = repoint(table.slots[loc], address, length)
        elif loc == LOC_CACHE:
            entry = table.cache.get(key)
            entry.address, entry.length = address, length
        else:
            with table.side_lock:
                table.fallback.put(key, address, length)

    def _refresh_cache_bit(self, table: MemTable, bucket: int, slot: int) -> None:
        seed = table.seeds[bucket]
        flat = bucket * SLOTS_PER_BUCKET + slot
        if any(slot_of(k, seed) == slot for k in table.cache.keys_in(bucket)):
            table.slots[flat] |= CACHE_BIT
        else:
            table.slots[flat] &= ~CACHE_BIT & (1 << 64) - 1

    # --- mutations (caller holds the bucket stripe) -------------------------------------

    def _insert(self, table: MemTable, bucket: int, key: bytes, block: bytes) -> tuple[Outcome, int | None]:
        fp = fingerprint_of(key)
        length = len(block)
        existing = self._locate_key(table, bucket, key, fp)
        address = self.log.append(block)
        if existing is not None:
            self._repoint(table, existing, key, address, length)
            return Outcome.UPDATED, None
        slots = table.slots
        base = bucket * SLOTS_PER_BUCKET
        word_in = fp << FP_SHIFT | length << LEN_SHIFT | address
        home = base + slot_of(key, table.seeds[bucket])
        if not slots[home] & LEN_FIELD:
            slots[home] = (slots[home] & CACHE_BIT) | word_in
            table.add_residents(1)
            return Outcome.INSERTED, None
        occupied = [base + s for s in range(SLOTS_PER_BUCKET) if slots[base + s] & LEN_FIELD]
        if len(occupied) < SLOTS_PER_BUCKET:
            members = [(self.log.read_key(slots[i] & ADDR_MASK), slots[i] & ~CACHE_BIT) for i in occupied]
            members.append((key, word_in))
            try:
                seed = ludo.find_seed([k for k, _ in members])
            except NoSeed:
                pass
            else:
                fresh = [0] * SLOTS_PER_BUCKET
                for k, w in members:
                    fresh[slot_of(k, seed)] = w
                for k in table.cache.keys_in(bucket):
                    fresh[slot_of(k, seed)] |= CACHE_BIT
                table.seeds[bucket] = seed
                for s in range(SLOTS_PER_BUCKET):
                    slots[base + s] = fresh[s]
                table.add_residents(1)
                return Outcome.INSERTED, seed
        table.cache.put(key, bucket, address, length)
        slots[home] |= CACHE_BIT
        return Outcome.CACHED, None

    def _update(self, table: MemTable, bucket: int, slot: int, key: bytes, block: bytes) -> tuple[Reply, int]:
        loc = self._locate_key(table, bucket, key, fingerprint_of(key), slot)
        if loc is None:
            return Reply(Status.NOT_FOUND), 0
        address = self.log.append(block)
        self._repoint(table, loc, key, address, len(block))
        base = bucket * SLOTS_PER_BUCKET
        seed = table.seeds[bucket] if loc >= 0 and loc != base + slot else None
        return Reply(Status.SUCCESS, new_seed=seed, outcome=Outcome.UPDATED), address

    def _delete(self, table: MemTable, bucket: int, slot: int, key: bytes) -> Reply:
        loc = self._locate_key(table, bucket, key, fingerprint_of(key), slot)
        if loc is None:
            return Reply(Status.NOT_FOUND)
        if loc >= 0:
            table.slots[loc] &= _NOT_LEN
            table.add_residents(-1)
        elif loc == LOC_CACHE:
            entry = table.cache.pop(key)
            self._refresh_cache_bit(table, entry.bucket, slot_of(key, table.seeds[entry.bucket]))
        else:
            with table.side_lock:
                table.fallback.pop(key)
        return Reply(Status.SUCCESS)

    # --- request handlers -------------------------------------------------------------------

    def handle_makeup_get(self, table_id: int, bucket: int, key: bytes) -> Reply:
        table = self._table(table_id, bucket)
        with self._stripe(table_id, bucket):
            loc = self._locate_key(table, bucket, key, fingerprint_of(key))
            if loc is None:
                return Reply(Status.NOT_FOUND)
            seed = table.seeds[bucket] if loc >= 0 else None
            return Reply(Status.SUCCESS, self._read_loc(table, loc, key), seed)

    def _enter_write(
        self, kind: Kind, table_id: int, bucket: int, slot: int, key: bytes, value: bytes
    ) -> tuple[Reply | None, bool]:
        """Admit a write.  Returns ``(reply, mirrored)``: a reply means the write
        was buffered or refused; ``mirrored`` routes an update through the split
        path.  Otherwise the caller counts as an active write until it leaves."""
        with self._gate:
            rs = self._resize
            if rs is not None and rs.targets(table_id):
                if rs.phase is Phase.DRAINING or (rs.phase is not Phase.PRE_RESIZE and kind is not Kind.UPDATE):
                    return self._buffer(rs, kind, table_id, bucket, slot, key, value), False
                if rs.phase is not Phase.PRE_RESIZE:
                    return None, True
            table = self.tables.get(table_id)
            if kind is Kind.INSERT and table is not None and table.stopped:
                return Reply(Status.REFUSED, outcome=Outcome.REFUSED), False
            self._active_writes += 1
            return None, False

    def _buffer(self, rs: ResizeState, kind, table_id, bucket, slot, key, value) -> Reply:
        rs.pending.append(BufferedOp(kind, table_id, bucket, slot, key, value))
        if kind is not Kind.UPDATE:
            rs.pending_keys.add(key)
        rs.buffered_total += 1
        return Reply(Status.FALSE_BUFFERED, U64.pack(rs.epoch), outcome=Outcome.BUFFERED)

    def _leave_write(self) -> None:
        with self._gate:
            self._active_writes -= 1
            if not self._active_writes:
                self._gate.notify_all()

    def handle_insert(self, table_id: int, bucket: int, key: bytes, value: bytes) -> Reply:
        block = encode_block(key, value)
        early, _ = self._enter_write(Kind.INSERT, table_id, bucket, 0, key, value)
        if early is not None:
            return early
        try:
            table = self._table(table_id, bucket)
            with self._stripe(table_id, bucket):
                outcome, seed = self._insert(table, bucket, key, block)
        finally:
            self._leave_write()
        triggered = self._check_thresholds(table)
        return Reply(Status.PRE_RESIZE if triggered else Status.SUCCESS, new_seed=seed, outcome=outcome)

    def handle_update(self, table_id: int, bucket: int, slot: int, key: bytes, value: bytes) -> Reply:
        block = encode_block(key, value)
        early, mirrored = self._enter_write(Kind.UPDATE, table_id, bucket, slot, key, value)
        if early is not None:
            return early
        if mirrored:
            return self._mirrored_update(table_id, bucket, slot, key, value, block)
        try:
            table = self._table(table_id, bucket)
            with self._stripe(table_id, bucket):
                reply, _ = self._update(table, bucket, slot, key, block)
        finally:
            self._leave_write()
        return reply

    def handle_delete(self, table_id: int, bucket: int, slot: int, key: bytes) -> Reply:
        early, _ = self._enter_write(Kind.DELETE, table_id, bucket, slot, key, b"")
        if early is not None:
            return early
        try:
            table = self._table(table_id, bucket)
            with self._stripe(table_id, bucket):
                return self._delete(table, bucket, slot, key)
        finally:
            self._leave_write()

    def _mirrored_update(self, table_id: int, bucket: int, slot: int, key: bytes, value: bytes, block: bytes) -> Reply:
        rs = self._resize
        with rs.mirror_lock:
            with self._gate:
                if rs.phase is Phase.DRAINING or key in rs.pending_keys:
                    return self._buffer(rs, Kind.UPDATE, table_id, bucket, slot, key, value)
            table = self._table(table_id, bucket)
            with self._stripe(table_id, bucket):
                reply, address = self._update(table, bucket, slot, key, block)
            if reply.status is not Status.SUCCESS:
                return reply
            if table_id == rs.stale_id:
                if rs.mirroring:
                    other = self.tables[rs.new_ids[ludo.split_bit(key, table.local_depth + 1)]]
                    self._mirror_into(other, key, address, len(block))
                else:
                    rs.dirty[key] = (address, len(block))
            else:
                self._mirror_into(self.tables[rs.stale_id], key, address, len(block))
            return reply

    def _mirror_into(self, table: MemTable, key: bytes, address: int, length: int) -> None:
        loc = self._find_anywhere(table, key)
        if loc is not None:
            self._repoint(table, loc, key, address, length)

    # --- dispatch ------------------------------------------------------------------------------

    def dispatch(self, frame: RequestFrame) -> ResponseFrame:
        """Serve one data request.  Registered-memory kinds are answered by the transport."""
        kind = frame.kind
        self.requests[kind] += 1
        try:
            if kind is Kind.GET:
                block = self.handle_get(frame.table_id, frame.bucket, frame.slot)
                reply = Reply(Status.SUCCESS, block) if block is not None else Reply(Status.NOT_FOUND)
            elif kind is Kind.MAKEUP_GET:
                reply = self.handle_makeup_get(frame.table_id, frame.bucket, frame.key)
            elif kind is Kind.INSERT:
                reply = self.handle_insert(frame.table_id, frame.bucket, frame.key, frame.value)
            elif kind is Kind.UPDATE:
                reply = self.handle_update(frame.table_id, frame.bucket, frame.slot, frame.key, frame.value)
            elif kind is Kind.DELETE:
                reply = self.handle_delete(frame.table_id, frame.bucket, frame.slot, frame.key)
            else:
                raise OutOfRange(f"{kind.name} is not a data request")
        except OutOfRange:
            reply = Reply(Status.OUT_OF_RANGE)
        except BlockTooLarge:
            reply = Reply(Status.TOO_LARGE)
        return ResponseFrame(frame.request_id, reply.status, reply.new_seed, self._notice(origin_of(frame.request_id)), reply.payload)

    def _notice(self, origin: int) -> bool:
        rs = self._resize
        if rs is None or rs.phase is Phase.DRAINING or origin in rs.notified:
            return False
        with self._gate:
            if origin in rs.notified:
                return False
            rs.notified.add(origin)
        self._kick.set()
        return True

    # --- registered memory ------------------------------------------------------------------------

    def resize_read(self, offset: int, length: int) -> bytes | None:
        image = self._image
        return None if image is None else image.read(offset, length)

    def resize_faa(self, offset: int, delta: int) -> int | None:
        image = self._image
        if image is None:
            return None
        return image.faa(offset, delta)

    # --- resize ------------------------------------------------------------------------------------

    def _check_thresholds(self, table: MemTable) -> bool:
        """Update the stop flag; enter PRE_RESIZE when ``table`` crosses s_slow.  True on entry."""
        cfg = self.config
        cached = len(table.cache)
        over_slow = table.load_factor >= cfg.slow_load or cached >= cfg.slow_cache
        if not over_slow:
            return False
        with self._gate:
            if cached >= cfg.stop_cache and not table.stopped:
                table.stopped = True
                rs = self._resize
                if rs is not None and rs.phase is Phase.PRE_RESIZE and rs.stale_id != table.table_id:
                    # nothing is built yet: split the table that now refuses inserts instead
                    log.info("pending resize retargeted from table %d to stopped table %d", rs.stale_id, table.table_id)
                    rs.stale_id = table.table_id
                self._kick.set()
            if self._resize is not None or not cfg.resize_enabled or self._closed or table.table_id not in self.tables:
                return False
            if not table.stopped:
                # a table that already refuses inserts goes first
                table = next((t for t in self.tables.values() if t.stopped), table)
            self._epoch += 1
            self._resize = ResizeState(self._epoch, table.table_id, time.monotonic())
            self._resize.timeline["pre_resize"] = time.monotonic()
            self._image = RegisteredImage(encode_image(0, self.global_depth, b""))
        log.info("table %d enters pre-resize (load %.3f, cache %d)", table.table_id, table.load_factor, cached)
        if cfg.background_resize:
            self._watcher = threading.Thread(target=self._watch, args=(self._resize,), name="outback-resize", daemon=True)
            self._watcher.start()
        return True

    def trigger_resize(self, table_id: int = 0) -> bool:
        """Start a resize of ``table_id`` regardless of thresholds."""
        with self._gate:
            if self._resize is not None or table_id not in self.tables:
                return False
            self._epoch += 1
            self._resize = ResizeState(self._epoch, table_id, time.monotonic())
            self._resize.timeline["pre_resize"] = time.monotonic()
            self._image = RegisteredImage(encode_image(0, self.global_depth, b""))
        if self.config.background_resize:
            self._watcher = threading.Thread(target=self._watch, args=(self._resize,), name="outback-resize", daemon=True)
            self._watcher.start()
        return True

    def _watch(self, rs: ResizeState) -> None:
        while not self._closed and self._resize is rs:
            try:
                self.step_resize()
            except Exception:
                log.exception("resize worker failed")
                raise
            if self._resize is not rs:
                break
            interval = self.config.finalize_interval if rs.phase is Phase.PUBLISHED else 0.01
            self._kick.wait(interval)
            self._kick.clear()

    def step_resize(self) -> Phase:
        """Advance the state machine by at most one phase."""
        rs = self._resize
        if rs is None:
            return Phase.IDLE
        if rs.phase is Phase.PRE_RESIZE and self._build_due(rs):
            self._build(rs)
        elif rs.phase is Phase.PUBLISHED and self._image.load(0) == 0:
            self._finalize(rs)
        return self.phase

    def _build_due(self, rs: ResizeState) -> bool:
        stale = self.tables[rs.stale_id]
        return (
            len(rs.notified) >= self.config.compute_nodes
            or stale.stopped
            or time.monotonic() - rs.started >= self.config.notify_timeout
        )

    def _snapshot(self, table: MemTable) -> tuple[list[bytes], list[int]]:
        keys: list[bytes] = []
        words: list[int] = []
        view = table.words()
        for i in np.flatnonzero(view & np.uint64(LEN_FIELD)):
            word = int(view[i])
            keys.append(self.log.read_key(word & ADDR_MASK))
            words.append(word & ~CACHE_BIT)
        for key, entry in table.cache.items():
            keys.append(key)
            words.append(fingerprint_of(key) << FP_SHIFT | entry.length << LEN_SHIFT | entry.address)
        for key, (address, length) in table.fallback.items():
            keys.append(key)
            words.append(fingerprint_of(key) << FP_SHIFT | length << LEN_SHIFT | address)
        return keys, words

    def _build(self, rs: ResizeState) -> None:
        with self._gate:
            rs.phase = Phase.BUILDING
            rs.timeline["building"] = time.monotonic()
            while self._active_writes:
                self._gate.wait()
        stale = self.tables[rs.stale_id]
        with rs.mirror_lock:
            keys, words = self._snapshot(stale)
        depth = stale.local_depth + 1
        halves: list[list[int]] = [[], []]
        for i, key in enumerate(keys):
            halves[ludo.split_bit(key, depth)].append(i)
        new_ids = (self._next_table_id, self._next_table_id + 1)
        self._next_table_id += 2
        built_tables: dict[int, MemTable] = {}
        indexes: list[ludo.TableIndex] = []
        for tid, members in zip(new_ids, halves):
            sub_keys = [keys[i] for i in members]
            payloads = np.array([words[i] for i in members], dtype=np.uint64)
            buckets = max(stale.bucket_count, self.config.min_buckets, ludo.bucket_count_for(len(sub_keys), self.config.load_factor))
            built = ludo.construct(sub_keys, payloads, self.config.load_factor, bucket_count=buckets, version=rs.epoch)
            table = self._table_from(built, tid, depth)
            for i in built.fallback:
                w = int(payloads[i])
                table.fallback.put(sub_keys[int(i)], w & ADDR_MASK, slot_length(w))
            built_tables[tid] = table
            rs.new_locators[tid] = built.locator
            indexes.append(ludo.TableIndex(tid, depth, built.bucket_count, built.locator, bytearray(built.seeds)))
        directory, global_depth = ludo.split_directory(self.directory, self.global_depth, rs.stale_id, new_ids, depth)
        with rs.mirror_lock:
            for key, (address, length) in rs.dirty.items():
                self._mirror_into(built_tables[new_ids[ludo.split_bit(key, depth)]], key, address, length)
            rs.dirty.clear()
            self.tables.update(built_tables)
            rs.new_ids = new_ids
            rs.mirroring = True
        self.directory, self.global_depth = directory, global_depth
        body = encode_image_body(rs.epoch, rs.stale_id, indexes)
        self._image.replace(encode_image(self.config.compute_nodes, global_depth, body))
        with self._gate:
            rs.phase = Phase.PUBLISHED
            rs.timeline["published"] = time.monotonic()
        log.info("table %d split into %s (%d keys)", rs.stale_id, new_ids, len(keys))

    def _finalize(self, rs: ResizeState) -> None:
        with self._gate:
            rs.phase = Phase.DRAINING
            rs.timeline["draining"] = time.monotonic()
        with rs.mirror_lock:
            stale = self.tables.pop(rs.stale_id)
            stale.clear_lengths()
        depth = stale.local_depth + 1
        while True:
            with self._gate:
                if not rs.pending:
                    rs.phase = Phase.IDLE
                    rs.timeline["idle"] = time.monotonic()
                    self._resize = None
                    self._image = None
                    self._bootstrap = None
                    self.resizes.append(dict(rs.timeline, epoch=rs.epoch, buffered=rs.buffered_total))
                    break
                op = rs.pending.popleft()
            self._replay(rs, op, depth)
        rs.new_locators.clear()
        log.info("resize %d finalized", rs.epoch)
        for table in sorted(self.tables.values(), key=lambda t: not t.stopped):
            if self._check_thresholds(table):
                break

    def _replay(self, rs: ResizeState, op: BufferedOp, depth: int) -> None:
        table_id, bucket = op.table_id, op.bucket
        if table_id == rs.stale_id:
            table_id = rs.new_ids[ludo.split_bit(op.key, depth)]
            bucket = candidate_bucket(op.key, rs.new_locators[table_id].query(op.key), self.tables[table_id].bucket_count)
        table = self.tables.get(table_id)
        if table is None or not 0 <= bucket < table.bucket_count:
            log.warning("dropping buffered %s for missing table %d", op.kind.name, table_id)
            return
        with self._stripe(table_id, bucket):
            if op.kind is Kind.INSERT:
                self._insert(table, bucket, op.key, encode_block(op.key, op.value))
            elif op.kind is Kind.UPDATE:
                self._update(table, bucket, -1, op.key, encode_block(op.key, op.value))
            else:
                self._delete(table, bucket, -1, op.key)
        self._check_stop(table)

    def _check_stop(self, table: MemTable) -> None:
        if len(table.cache) >= self.config.stop_cache:
            table.stopped = True

    def verify(self) -> list[str]:
        """Structural invariant violations (empty when consistent).  Not safe under concurrent writes."""
        problems: list[str] = []
        extent = self.log.extent
        owners: dict[int, dict[bytes, str]] = {}
        for tid, table in self.tables.items():
            owner = owners[tid] = {}
            for b in range(table.bucket_count):
                seed = table.seeds[b]
                for s in range(SLOTS_PER_BUCKET):
                    word = table.slots[b * SLOTS_PER_BUCKET + s]
                    length = slot_length(word)
                    if not length:
                        continue
                    if (word & ADDR_MASK) + length > extent:
                        problems.append(f"{tid}/{b}/{s}: block past the log extent")
                        continue
                    key = self.log.read_key(word & ADDR_MASK)
                    if slot_of(key, seed) != s:
                        problems.append(f"{tid}/{b}/{s}: {key!r} not at its seeded slot")
                    if (word >> FP_SHIFT) & 0x3F != fingerprint_of(key):
                        problems.append(f"{tid}/{b}/{s}: fingerprint mismatch")
                    if key in owner:
                        problems.append(f"{key!r} stored twice ({owner[key]}, slot {tid}/{b}/{s})")
                    owner[key] = f"slot {tid}/{b}/{s}"
            for key, entry in table.cache.items():
                home = entry.bucket * SLOTS_PER_BUCKET + slot_of(key, table.seeds[entry.bucket])
                if not table.slots[home] & CACHE_BIT:
                    problems.append(f"cached {key!r}: home slot lacks the cache bit")
                if key in owner:
                    problems.append(f"{key!r} cached and also stored ({owner[key]})")
                owner[key] = "cache"
            for key, _ in table.fallback.items():
                if key in owner:
                    problems.append(f"{key!r} in the fallback and also stored ({owner[key]})")
                owner[key] = "fallback"
            if table.residents != table.count_residents():
                problems.append(f"table {tid}: resident count {table.residents} != {table.count_residents()}")
        # while a split is in flight the stale table and its replacements hold the same keys
        state = self._resize
        views = [set(owners)]
        if state is not None and state.new_ids:
            views = [set(owners) - set(state.new_ids), set(owners) - {state.stale_id}]
        for view in views:
            seen: dict[bytes, int] = {}
            for tid in sorted(view):
                for key in owners[tid]:
                    if key in seen:
                        problems.append(f"{key!r} in tables {seen[key]} and {tid}")
                    seen[key] = tid
        return problems

    def wait_idle(self, timeout: float = 30.0) -> bool:
        deadline = time.monotonic() + timeout
        while self._resize is not None:
            if time.monotonic() > deadline:
                return False
            time.sleep(0.005)
        return True

    def close(self) -> None:
        self._closed = True
        self._kick.set()
        watcher = self._watcher
        if watcher is not None and watcher is not threading.current_thread():
            watcher.join(timeout=5)
