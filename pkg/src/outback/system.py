"""Wiring helpers: one memory node plus its compute-node clients in one process."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from outback.client import Client, ClientOptions
from outback.memnode.engine import MemNode, MemNodeConfig
from outback.protocol import decode_index, encode_index
from outback.transport import MemNodeServer, connect


@dataclass
class LocalShard:
    """A memory node served over an in-process or TCP channel."""

    memnode: MemNode
    server: MemNodeServer
    address: tuple[str, int] | None = None
    clients: list[Client] = field(default_factory=list)
    _index_bytes: bytes = b""

    @classmethod
    def start(
        cls,
        keys: Sequence[bytes] = (),
        values: Sequence[bytes] = (),
        *,
        config: MemNodeConfig | None = None,
        workers: int = 2,
        tcp: bool = False,
        pad: int = 0,
        **memnode_options,
    ) -> LocalShard:
        memnode = MemNode(config, **memnode_options)
        index = memnode.bulk_load(list(keys), list(values)) if len(keys) else memnode.export_index()
        server = MemNodeServer(memnode, workers, pad)
        address = server.listen().address if tcp else None
        return cls(memnode, server, address, _index_bytes=encode_index(index))

    def client(self, node_id: int | None = None, *, latency: float = 0.0, options: ClientOptions | None = None) -> Client:
        """New compute node with its own copy of the bootstrap index."""
        node_id = len(self.clients) if node_id is None else node_id
        target = self.address if self.address is not None else self.server
        endpoint = connect(target, node_id, latency=latency, pad=self.server.pad)
        c = Client(endpoint, decode_index(self._index_bytes), options)
        self.clients.append(c)
        return c

    def close(self) -> None:
        for c in self.clients:
            c.close()
        self.server.close()

    def __enter__(self) -> LocalShard:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
