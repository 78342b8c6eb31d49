"""Shared fixtures for building small deterministic systems."""

from __future__ import annotations

from outback.client import ClientOptions
from outback.hashing import slot_of
from outback.system import LocalShard

STEP = ClientOptions(background_fetch=False, fetch_timeout=5.0)


def shard(keys=(), values=None, *, workers=0, **memnode):
    memnode.setdefault("background_resize", False)
    memnode.setdefault("notify_timeout", 3600.0)
    values = values if values is not None else [b"v" + k for k in keys]
    return LocalShard.start(list(keys), list(values), workers=workers, **memnode)


def colliding_key(key: bytes, seed: int, prefix: bytes = b"c") -> bytes:
    """A different key that lands on the same slot as ``key`` under ``seed``."""
    target = slot_of(key, seed)
    i = 0
    while True:
        cand = prefix + b"%d" % i
        if cand != key and slot_of(cand, seed) == target:
            return cand
        i += 1


def drive_resize(sh, clients, max_steps=50):
    """Step memnode and clients until the resize completes."""
    for _ in range(max_steps):
        sh.memnode.step_resize()
        for c in clients:
            c.poll_resize()
        if sh.memnode.phase.value == "idle":
            for c in clients:
                c.poll_resize()
            return
    raise AssertionError("resize did not complete")


def get_path_probe():
    """Static and dynamic view of ``MemNode.handle_get``.

    Returns the call names in its source, the number of ``table.slots``
    subscripts, the number of key comparisons, and the functions entered
    while serving one hit.
    """
    import ast
    import inspect
    import sys
    import textwrap

    from outback.memnode.engine import MemNode

    tree = ast.parse(textwrap.dedent(inspect.getsource(MemNode.handle_get)))
    calls = [ast.unparse(n.func) for n in ast.walk(tree) if isinstance(n, ast.Call)]
    slot_reads = sum(1 for n in ast.walk(tree) if isinstance(n, ast.Subscript) and ast.unparse(n.value) == "table.slots")
    key_compares = sum(1 for n in ast.walk(tree) if isinstance(n, ast.Compare) and "key" in ast.unparse(n))

    mn = MemNode(min_buckets=16, background_resize=False)
    mn.handle_insert(0, 3, b"probe", b"v")
    slot = slot_of(b"probe", 0)
    seen: list[str] = []

    def profiler(frame, event, arg):
        if event == "c_call":
            seen.append(getattr(arg, "__qualname__", repr(arg)))
        elif event == "call":
            seen.append(frame.f_code.co_name)

    sys.setprofile(profiler)
    try:
        hit = mn.handle_get(0, 3, slot)
    finally:
        sys.setprofile(None)
    mn.close()
    assert hit is not None
    return calls, slot_reads, key_compares, seen
