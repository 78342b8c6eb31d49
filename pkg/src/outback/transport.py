"""One-round-trip RPC between compute nodes and a memory node.

A :class:`MemNodeServer` owns a worker pool that runs memory-node
handlers.  RESIZE_READ and RESIZE_FAA never reach that pool: they are
answered straight from the registered image, the way one-sided reads and
atomics bypass the remote CPU.

Two channels share one :class:`Endpoint` interface:

* in-process: each request is encoded, handed to the pool and the
  response decoded, so both sides only ever see bytes;
* TCP: 4-byte little-endian length prefix per frame; a reader thread
  matches responses to requests by ``request_id``.
"""

from __future__ import annotations

import itertools
import logging
import socket
import socketserver
import struct
import threading
import time
from collections import Counter
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Callable

from outback.errors import ConnectionRefused, MalformedFrame, OutOfRange, Timeout, TransportError
from outback.memnode.engine import MemNode
from outback.protocol import (
    RESIZE_ADD,
    RESIZE_KINDS,
    RESIZE_RANGE,
    U64,
    Kind,
    RequestFrame,
    ResponseFrame,
    Status,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    make_request_id,
    pad_frame,
    resize_faa,
    resize_read,
)

log = logging.getLogger(__name__)

_PREFIX = struct.Struct("<I")
MAX_FRAME = 1 << 28


class MemNodeServer:
    """Serves encoded requests against a :class:`MemNode`.

    ``workers=0`` runs handlers inline in the submitting thread.  ``pad``
    zero-fills responses to that alignment and accepts padded requests.
    """

    def __init__(self, memnode: MemNode, workers: int = 2, pad: int = 0):
        self.memnode = memnode
        self.workers = workers
        self.pad = pad
        self._pool = ThreadPoolExecutor(workers, thread_name_prefix="outback-worker") if workers > 0 else None
        self._listeners: list[TcpListener] = []
        self.worker_executions = 0
        self.registered_ops: Counter[Kind] = Counter()
        self._lock = threading.Lock()

    def handle(self, raw: bytes) -> bytes:
        """Decode, serve and encode one request in the calling thread."""
        try:
            frame = decode_request(raw, self.pad)
        except MalformedFrame:
            request_id = U64.unpack_from(raw, 14)[0] if len(raw) >= 22 else 0
            resp = ResponseFrame(request_id, Status.OUT_OF_RANGE)
        else:
            if frame.kind in RESIZE_KINDS:
                resp = self._registered(frame)
            else:
                with self._lock:
                    self.worker_executions += 1
                resp = self.memnode.dispatch(frame)
        return pad_frame(encode_response(resp), self.pad)

    def _registered(self, frame: RequestFrame) -> ResponseFrame:
        self.registered_ops[frame.kind] += 1
        try:
            if frame.kind is Kind.RESIZE_READ:
                offset, length = RESIZE_RANGE.unpack(frame.value)
                data = self.memnode.resize_read(offset, length)
                if data is None:
                    return ResponseFrame(frame.request_id, Status.NOT_FOUND)
                return ResponseFrame(frame.request_id, Status.SUCCESS, payload=data)
            offset, delta = RESIZE_ADD.unpack(frame.value)
            old = self.memnode.resize_faa(offset, delta)
            if old is None:
                return ResponseFrame(frame.request_id, Status.NOT_FOUND)
            return ResponseFrame(frame.request_id, Status.SUCCESS, payload=U64.pack(old))
        except OutOfRange:
            return ResponseFrame(frame.request_id, Status.OUT_OF_RANGE)

    def submit(self, raw: bytes, done: Callable[[bytes], None]) -> None:
        """Serve ``raw`` asynchronously; ``done`` receives the encoded response."""
        if raw and raw[0] in (Kind.RESIZE_READ, Kind.RESIZE_FAA) or self._pool is None:
            done(self.handle(raw))
            return
        self._pool.submit(self._run, raw, done)

    def _run(self, raw: bytes, done: Callable[[bytes], None]) -> None:
        try:
            done(self.handle(raw))
        except Exception:
            log.exception("request handler failed")
            raise

    def listen(self, host: str = "127.0.0.1", port: int = 0) -> TcpListener:
        listener = TcpListener(self, host, port)
        self._listeners.append(listener)
        return listener

    def close(self) -> None:
        for listener in self._listeners:
            listener.close()
        if self._pool is not None:
            self._pool.shutdown(wait=True)
        self.memnode.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: MemNodeServer = self.server.outback  # type: ignore[attr-defined]
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        write_lock = threading.Lock()

        def reply(raw: bytes) -> None:
            with write_lock:
                try:
                    sock.sendall(_PREFIX.pack(len(raw)) + raw)
                except OSError:
                    pass

        try:
            while True:
                raw = _read_frame(sock)
                if raw is None:
                    return
                server.submit(raw, reply)
        except (OSError, TransportError):
            return


class _ThreadingServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class TcpListener:
    def __init__(self, server: MemNodeServer, host: str, port: int):
        self._server = _ThreadingServer((host, port), _Handler)
        self._server.outback = server  # type: ignore[attr-defined]
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, name="outback-tcp", daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def _read_frame(sock: socket.socket) -> bytes | None:
    head = _read_exact(sock, _PREFIX.size)
    if head is None:
        return None
    (size,) = _PREFIX.unpack(head)
    if size > MAX_FRAME:
        raise TransportError(f"frame of {size} bytes")
    return _read_exact(sock, size)


class Endpoint:
    """Client side of a channel to one memory node."""

    def __init__(self, node_id: int = 0, latency: float = 0.0, timeout: float = 10.0, pad: int = 0):
        self.node_id = node_id
        self.latency = latency
        self.timeout = timeout
        self.pad = pad
        self._seq = itertools.count(1)
        self._stats_lock = threading.Lock()
        self.round_trips: Counter[Kind] = Counter()

    def next_request_id(self) -> int:
        return make_request_id(self.node_id, next(self._seq))

    def _count(self, kind: Kind) -> None:
        with self._stats_lock:
            self.round_trips[kind] += 1

    @property
    def data_round_trips(self) -> int:
        with self._stats_lock:
            return sum(n for k, n in self.round_trips.items() if k not in RESIZE_KINDS)

    def submit(self, frame: RequestFrame) -> Future[ResponseFrame]:
        frame = frame.with_id(self.next_request_id())
        self._count(frame.kind)
        raw = pad_frame(encode_request(frame), self.pad)
        if self.latency:
            time.sleep(self.latency)
        return self._submit_raw(frame.request_id, raw)

    def send(self, frame: RequestFrame) -> ResponseFrame:
        future = self.submit(frame)
        try:
            return future.result(self.timeout)
        except FutureTimeout:  # distinct from the builtin before 3.11
            raise Timeout(f"{frame.kind.name} timed out after {self.timeout}s") from None

    def resize_read(self, offset: int, length: int) -> bytes | None:
        """Bytes of the registered image, or None when no image is registered."""
        r = self.send(resize_read(offset, length))
        if r.status is Status.OUT_OF_RANGE:
            raise OutOfRange(f"image read {offset}+{length}")
        return r.payload if r.status is Status.SUCCESS else None

    def resize_faa(self, offset: int, delta: int) -> int | None:
        """Atomic add on the image; returns the previous value."""
        r = self.send(resize_faa(offset, delta))
        if r.status is Status.OUT_OF_RANGE:
            raise OutOfRange(f"image FAA at {offset}")
        return U64.unpack(r.payload)[0] if r.status is Status.SUCCESS else None

    def _submit_raw(self, request_id: int, raw: bytes) -> Future[ResponseFrame]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InprocEndpoint(Endpoint):
    def __init__(self, server: MemNodeServer, node_id: int = 0, latency: float = 0.0, timeout: float = 10.0):
        super().__init__(node_id, latency, timeout, server.pad)
        self.server = server

    def _submit_raw(self, request_id: int, raw: bytes) -> Future[ResponseFrame]:
        future: Future[ResponseFrame] = Future()

        def done(resp: bytes) -> None:
            try:
                future.set_result(decode_response(resp, self.pad))
            except MalformedFrame as exc:
                future.set_exception(exc)

        self.server.submit(raw, done)
        return future


class TcpEndpoint(Endpoint):
    def __init__(self, host: str, port: int, node_id: int = 0, latency: float = 0.0, timeout: float = 10.0, pad: int = 0):
        super().__init__(node_id, latency, timeout, pad)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionRefused(f"cannot reach {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._write_lock = threading.Lock()
        self._waiting: dict[int, Future[ResponseFrame]] = {}
        self._waiting_lock = threading.Lock()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, name="outback-tcp-reader", daemon=True)
        self._reader.start()

    def _submit_raw(self, request_id: int, raw: bytes) -> Future[ResponseFrame]:
        future: Future[ResponseFrame] = Future()
        with self._waiting_lock:
            if self._closed:
                raise TransportError("endpoint closed")
            self._waiting[request_id] = future
        with self._write_lock:
            try:
                self._sock.sendall(_PREFIX.pack(len(raw)) + raw)
            except OSError as exc:
                with self._waiting_lock:
                    self._waiting.pop(request_id, None)
                raise TransportError(f"send failed: {exc}") from exc
        return future

    def _read_loop(self) -> None:
        error: Exception = TransportError("connection closed")
        try:
            while True:
                raw = _read_frame(self._sock)
                if raw is None:
                    break
                resp = decode_response(raw, self.pad)
                with self._waiting_lock:
                    future = self._waiting.pop(resp.request_id, None)
                if future is not None:
                    future.set_result(resp)
        except (OSError, TransportError) as exc:
            error = exc
        with self._waiting_lock:
            self._closed = True
            waiting, self._waiting = self._waiting, {}
        for future in waiting.values():
            future.set_exception(error)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect(target, node_id: int = 0, *, latency: float = 0.0, timeout: float = 10.0, pad: int = 0) -> Endpoint:
    """Endpoint to ``target``: a :class:`MemNodeServer`, ``(host, port)`` or ``"host:port"``."""
    if isinstance(target, MemNodeServer):
        return InprocEndpoint(target, node_id, latency, timeout)
    if isinstance(target, str):
        host, _, port = target.rpartition(":")
        target = (host or "127.0.0.1", int(port))
    host, port = target
    return TcpEndpoint(host, port, node_id, latency, timeout, pad)
