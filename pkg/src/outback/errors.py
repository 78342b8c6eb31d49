"""Exception hierarchy shared by both roles."""

from __future__ import annotations


class OutbackError(Exception):
    """Base class for every error raised by this package."""


class ConstructionFailed(OutbackError):
    """The bucket locator could not find an acyclic graph within the retry cap."""


class AssignmentFailed(OutbackError):
    """Two-choice displacement gave up; the bucket count is too small."""


class NoSeed(OutbackError):
    """None of the 256 slot seeds separates the keys of a bucket."""


class MalformedBytes(OutbackError, ValueError):
    """A serialized structure is truncated or inconsistent."""


class MalformedFrame(MalformedBytes):
    """A wire frame could not be decoded."""


class BlockTooLarge(OutbackError, ValueError):
    """A KV block does not fit the 9-bit length field (511 bytes)."""


class NotFound(OutbackError, LookupError):
    """The key is absent.

    ``pending`` is true when this compute node has a buffered insert/delete
    for the key that the memory node will apply once the running resize
    finishes.
    """

    def __init__(self, key: bytes | None = None, *, pending: bool = False):
        super().__init__(key)
        self.key = key
        self.pending = pending


class KeyMismatch(OutbackError):
    """The slot holds a different key and no cached entry shares it."""


class Refused(OutbackError):
    """The memory node stopped accepting inserts (overflow cache past s_stop)."""


class OutOfRange(OutbackError, IndexError):
    """A table, bucket, slot or registered-memory offset is out of range."""


class TransportError(OutbackError):
    """Base class for channel failures."""


class ConnectionRefused(TransportError, ConnectionError):
    pass


class Timeout(TransportError, TimeoutError):
    pass


class EmptyRing(OutbackError):
    """Routing was attempted on a ring with no shards."""
