"""Compute-node client.

Holds the compact index (directory, locators, seeds), computes
``(table, bucket, slot)`` locally and issues one round trip per request.
A read whose slot turns out to hold another key (or nothing) falls back to
MAKEUP_GET; any seed returned by the memory node is patched into the
local seed array, so the next read of that bucket is back to one trip.

Resizes are followed in the background: after a resize notice the fetch
worker polls the registered image, swaps in the new index once published,
waits for operations still using the old index, then decrements
``N_cNode`` exactly once.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass

from outback.errors import BlockTooLarge, NotFound, OutOfRange, Refused, Timeout
from outback.ludo import CompactIndex
from outback.memnode.layout import BLOCK_HEADER, MAX_BLOCK, decode_block
from outback.protocol import (
    IMAGE_BODY_OFFSET,
    IMAGE_HEADER,
    U64,
    Kind,
    RequestFrame,
    ResponseFrame,
    Status,
    decode_image_body,
)
from outback.transport import Endpoint, connect

log = logging.getLogger(__name__)


@dataclass
class ClientOptions:
    refused_attempts: int = 10
    backoff_start: float = 0.001
    backoff_cap: float = 0.1
    fetch_poll: float = 0.002
    fetch_timeout: float = 60.0
    background_fetch: bool = True


class Client:
    def __init__(self, endpoint: Endpoint, index: CompactIndex, options: ClientOptions | None = None):
        self.endpoint = endpoint
        self.options = options or ClientOptions()
        self._index = index
        self._cv = threading.Condition()
        self._inflight: Counter[int] = Counter()
        self._pending: dict[bytes, int] = {}
        self._finished_epoch = index.epoch
        self._applied_epoch = index.epoch
        self._worker: threading.Thread | None = None
        self._renotify = False
        self._fetch_lock = threading.Lock()
        self._closed = False
        self.fetch_error: BaseException | None = None
        self.counters: Counter[str] = Counter()
        self._stats_lock = threading.Lock()

    @property
    def index(self) -> CompactIndex:
        return self._index

    # --- bookkeeping -------------------------------------------------------------

    def _enter(self) -> CompactIndex:
        with self._cv:
            index = self._index
            self._inflight[id(index)] += 1
            return index

    def _exit(self, index: CompactIndex) -> None:
        with self._cv:
            self._inflight[id(index)] -= 1
            if not self._inflight[id(index)]:
                del self._inflight[id(index)]
                self._cv.notify_all()

    def _bump(self, **deltas: int) -> None:
        with self._stats_lock:
            self.counters.update(deltas)

    def _send(self, frame: RequestFrame) -> ResponseFrame:
        resp = self.endpoint.send(frame)
        if resp.notice or resp.status is Status.PRE_RESIZE:
            self._on_notice()
        return resp

    def _mark_pending(self, key: bytes, resp: ResponseFrame) -> None:
        epoch = U64.unpack(resp.payload)[0] if len(resp.payload) == 8 else self._applied_epoch + 1
        with self._cv:
            if epoch > self._finished_epoch:
                self._pending[key] = epoch

    def is_pending(self, key: bytes) -> bool:
        return key in self._pending

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    @staticmethod
    def _check_key(key: bytes) -> None:
        if not isinstance(key, (bytes, bytearray)) or not key:
            raise ValueError("keys must be non-empty bytes")

    # --- operations --------------------------------------------------------------

    def get(self, key: bytes) -> bytes:
        self._check_key(key)
        if key in self._pending:
            self._bump(gets=1, pending_reads=1)
            raise NotFound(key, pending=True)
        index = self._enter()
        try:
            table_id, bucket, slot = index.locate(key)
            resp = self._send(RequestFrame(Kind.GET, table_id, bucket, slot))
            if resp.status is Status.SUCCESS:
                k, v = decode_block(resp.payload)
                if k == key:
                    self._bump(gets=1, get_trips=1)
                    return v
            elif resp.status is Status.OUT_OF_RANGE:
                raise OutOfRange(f"table {table_id} bucket {bucket} unknown to the memory node")
            resp = self._send(RequestFrame(Kind.MAKEUP_GET, table_id, bucket, -1, key))
            self._bump(gets=1, get_trips=2, makeups=1)
            if resp.new_seed is not None and index.apply_seed(table_id, bucket, resp.new_seed):
                self._bump(seed_repairs=1)
            if resp.status is Status.SUCCESS:
                return decode_block(resp.payload)[1]
            if resp.status is Status.OUT_OF_RANGE:
                raise OutOfRange(f"table {table_id} bucket {bucket} unknown to the memory node")
            raise NotFound(key)
        finally:
            self._exit(index)

    def insert(self, key: bytes, value: bytes) -> Status:
        """Insert or overwrite.  Returns SUCCESS, or FALSE_BUFFERED while a resize holds the write."""
        self._check_key(key)
        if BLOCK_HEADER.size + len(key) + len(value) > MAX_BLOCK:
            raise BlockTooLarge(f"block of {BLOCK_HEADER.size + len(key) + len(value)} bytes exceeds {MAX_BLOCK}")
        delay = self.options.backoff_start
        for _ in range(self.options.refused_attempts):
            index = self._enter()
            try:
                table_id, bucket = index.locate_bucket(key)
                resp = self._send(RequestFrame(Kind.INSERT, table_id, bucket, 0, key, value))
            finally:
                self._exit(index)
            self._bump(inserts=1, write_trips=1)
            if resp.new_seed is not None and index.apply_seed(table_id, bucket, resp.new_seed):
                self._bump(seed_updates=1)
            status = resp.status
            if status is Status.REFUSED:
                self._bump(refused=1)
                time.sleep(delay)
                delay = min(self.options.backoff_cap, 2 * delay)
                continue
            return self._write_result(key, resp)
        raise Refused(f"insert refused {self.options.refused_attempts} times")

    def update(self, key: bytes, value: bytes) -> Status:
        self._check_key(key)
        if BLOCK_HEADER.size + len(key) + len(value) > MAX_BLOCK:
            raise BlockTooLarge(f"block of {BLOCK_HEADER.size + len(key) + len(value)} bytes exceeds {MAX_BLOCK}")
        return self._keyed_write(Kind.UPDATE, key, value)

    def delete(self, key: bytes) -> Status:
        self._check_key(key)
        return self._keyed_write(Kind.DELETE, key, b"")

    def _keyed_write(self, kind: Kind, key: bytes, value: bytes) -> Status:
        index = self._enter()
        try:
            table_id, bucket, slot = index.locate(key)
            resp = self._send(RequestFrame(kind, table_id, bucket, slot, key, value))
        finally:
            self._exit(index)
        self._bump(**{kind.name.lower() + "s": 1, "write_trips": 1})
        if resp.new_seed is not None and index.apply_seed(table_id, bucket, resp.new_seed):
            self._bump(seed_repairs=1)
        if resp.status is Status.NOT_FOUND:
            raise NotFound(key)
        return self._write_result(key, resp)

    def _write_result(self, key: bytes, resp: ResponseFrame) -> Status:
        status = resp.status
        if status is Status.FALSE_BUFFERED:
            self._bump(buffered=1)
            self._mark_pending(key, resp)
            return Status.FALSE_BUFFERED
        if status is Status.TOO_LARGE:
            raise BlockTooLarge("the memory node rejected the block size")
        if status is Status.OUT_OF_RANGE:
            raise OutOfRange("request addressed a table unknown to the memory node")
        if status is Status.REFUSED:
            raise Refused("insert refused")
        return Status.SUCCESS

    # --- resize ----------------------------------------------------------------------

    def _on_notice(self) -> None:
        with self._cv:
            if self._closed:
                return
            self._renotify = True
            if self._worker is not None or not self.options.background_fetch:
                return
            self._worker = threading.Thread(target=self._fetch_loop, name="outback-fetch", daemon=True)
            self._worker.start()

    def _fetch_loop(self) -> None:
        deadline = time.monotonic() + self.options.fetch_timeout
        try:
            while not self._closed:
                with self._cv:
                    self._renotify = False
                if self._poll_image() == "closed":
                    with self._cv:
                        if not self._renotify:
                            self._worker = None
                            return
                    deadline = time.monotonic() + self.options.fetch_timeout
                    continue
                if time.monotonic() > deadline:
                    raise Timeout(f"resize did not finish within {self.options.fetch_timeout}s")
                time.sleep(self.options.fetch_poll)
        except BaseException as exc:  # surfaced through fetch_error
            log.error("index fetch failed: %s", exc)
            self.fetch_error = exc
        with self._cv:
            self._worker = None

    def _poll_image(self) -> str:
        """One look at the registered image; swaps and acknowledges a new index if published."""
        with self._fetch_lock:
            return self._poll_image_locked()

    def _poll_image_locked(self) -> str:
        head = self.endpoint.resize_read(0, IMAGE_HEADER.size)
        if head is None:
            with self._cv:
                self._finished_epoch = max(self._finished_epoch, self._applied_epoch)
                self._pending.clear()
            return "closed"
        n_cnode, length, global_depth = IMAGE_HEADER.unpack(head)
        if not length:
            return "waiting"
        raw = self.endpoint.resize_read(IMAGE_BODY_OFFSET, length)
        if raw is None:
            return "closed"
        body = decode_image_body(raw)
        if body.epoch <= self._applied_epoch:
            return "acknowledged"
        with self._cv:
            old = self._index
            self._index = old.split(body.stale_table, body.tables, global_depth, body.epoch)
            self._finished_epoch = max(self._finished_epoch, body.epoch - 1)
            for key in [k for k, e in self._pending.items() if e < body.epoch]:
                del self._pending[key]
            while self._inflight[id(old)]:
                self._cv.wait()
            self._inflight.pop(id(old), None)
            self._applied_epoch = body.epoch
        self.endpoint.resize_faa(0, -1)
        self._bump(index_fetches=1)
        log.info("node %d switched to index epoch %d", self.endpoint.node_id, body.epoch)
        return "swapped"

    def poll_resize(self) -> str:
        """Single step of the fetch protocol: ``closed``, ``waiting``, ``acknowledged`` or ``swapped``."""
        return self._poll_image()

    def fetch_new_index(self, timeout: float | None = None) -> bool:
        """Synchronously follow a resize until the image closes.  True if an index was swapped."""
        deadline = time.monotonic() + (timeout if timeout is not None else self.options.fetch_timeout)
        fetched = self._applied_epoch
        while self._poll_image() != "closed":
            if time.monotonic() > deadline:
                raise Timeout("resize did not finish in time")
            time.sleep(self.options.fetch_poll)
        return self._applied_epoch > fetched

    def wait_resize(self, timeout: float = 60.0) -> None:
        """Block until the background fetch worker (if any) has finished."""
        deadline = time.monotonic() + timeout
        while True:
            with self._cv:
                worker = self._worker
            if worker is None:
                break
            worker.join(max(0.0, deadline - time.monotonic()))
            if time.monotonic() >= deadline:
                raise Timeout("fetch worker still running")
        if self.fetch_error is not None:
            raise self.fetch_error

    # --- reporting -----------------------------------------------------------------------

    def stats(self) -> dict[str, float]:
        with self._stats_lock:
            c = dict(self.counters)
        gets = c.get("gets", 0)
        c["makeup_rate"] = c.get("makeups", 0) / gets if gets else 0.0
        c["round_trips"] = self.endpoint.data_round_trips
        c["resize_round_trips"] = sum(self.endpoint.round_trips[k] for k in (Kind.RESIZE_READ, Kind.RESIZE_FAA))
        c["index_bytes"] = self._index.nbytes
        return c

    def close(self) -> None:
        with self._cv:
            self._closed = True
            worker = self._worker
        if worker is not None:
            worker.join(timeout=5)
        self.endpoint.close()


def open(target, index: CompactIndex, node_id: int = 0, *, latency: float = 0.0, options: ClientOptions | None = None) -> Client:
    """Client connected to ``target`` (a server object, ``(host, port)`` or ``"host:port"``)."""
    return Client(connect(target, node_id, latency=latency), index, options)
