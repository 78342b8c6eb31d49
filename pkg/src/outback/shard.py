"""Consistent-hash routing of keys to shards.

A shard is one memory node plus the compute nodes that serve it; requests
for a key go to the key's primary shard and rotate over its compute
nodes.  Replica placement is only computed (ring successors), never used
to copy data.
"""

from __future__ import annotations

import bisect
import itertools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import xxhash

from outback.errors import EmptyRing
from outback.hashing import RING_SEED

VNODES = 128
_xxh64 = xxhash.xxh64_intdigest


@dataclass
class Shard:
    uuid: str
    compute_nodes: list[str]
    memnode: str = ""
    _turn: itertools.count = field(default_factory=itertools.count, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def pick(self) -> str:
        """Next compute node of this shard, round robin."""
        if not self.compute_nodes:
            raise EmptyRing(f"shard {self.uuid} has no compute nodes")
        with self._lock:
            return self.compute_nodes[next(self._turn) % len(self.compute_nodes)]


class Ring:
    """``VNODES`` points per shard at ``xxh64(f"{uuid}#{i}", RING_SEED)``."""

    def __init__(self, shards: list[Shard] | None = None, vnodes: int = VNODES):
        self.vnodes = vnodes
        self._shards: dict[str, Shard] = {}
        self._points: list[int] = []
        self._owners: list[str] = []
        for shard in shards or ():
            self.add(shard)

    def add(self, shard: Shard) -> None:
        if shard.uuid in self._shards:
            raise ValueError(f"shard {shard.uuid} already on the ring")
        self._shards[shard.uuid] = shard
        self._rebuild()

    def remove(self, uuid: str) -> None:
        del self._shards[uuid]
        self._rebuild()

    def _rebuild(self) -> None:
        points = sorted(
            (_xxh64(f"{uuid}#{i}".encode(), RING_SEED), uuid) for uuid in self._shards for i in range(self.vnodes)
        )
        self._points = [p for p, _ in points]
        self._owners = [u for _, u in points]

    def __len__(self) -> int:
        return len(self._shards)

    def shard(self, uuid: str) -> Shard:
        return self._shards[uuid]

    def _position(self, h: int) -> int:
        if not self._points:
            raise EmptyRing("no shards on the ring")
        return bisect.bisect_left(self._points, h) % len(self._points)

    def route(self, key: bytes) -> Shard:
        """Owner of ``key``: first ring point clockwise from its hash."""
        return self._shards[self._owners[self._position(_xxh64(key, RING_SEED))]]

    def dispatch(self, key: bytes) -> tuple[str, str]:
        """``(shard uuid, compute node)`` that should serve ``key`` next."""
        shard = self.route(key)
        return shard.uuid, shard.pick()

    def successors(self, uuid: str, count: int = 2) -> list[Shard]:
        """Next ``count`` distinct shards clockwise from ``uuid``'s first point."""
        if uuid not in self._shards:
            raise KeyError(uuid)
        start = self._position(_xxh64(f"{uuid}#0".encode(), RING_SEED))
        out: list[str] = []
        for step in range(1, len(self._points) + 1):
            owner = self._owners[(start + step) % len(self._points)]
            if owner != uuid and owner not in out:
                out.append(owner)
                if len(out) == count:
                    break
        return [self._shards[u] for u in out]


def load_topology(path: str | Path) -> Ring:
    """Ring from a JSON file::

        {"shards": [{"uuid": "s0", "memnode": "host:port",
                     "compute_nodes": ["c0", "c1"]}, ...]}
    """
    doc = json.loads(Path(path).read_text())
    return Ring([Shard(s["uuid"], list(s.get("compute_nodes", [])), s.get("memnode", "")) for s in doc["shards"]])
