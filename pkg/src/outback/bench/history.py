"""Linearizability checking for concurrent KV histories.

A map is linearizable iff every key's sub-history is (locality), so each
key is checked on its own as a register that may be absent.  The search
keeps the set of reachable configurations ``(state, linearized-but-not-
returned ops)``; at each return the configurations are extended by
linearizing pending calls until the returning op is included.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

OK = "ok"
MISSING = "missing"


@dataclass(frozen=True)
class Op:
    key: bytes
    kind: str  # get | insert | update | delete
    value: bytes | None  # argument for writes, observed value (None = absent) for get
    result: str  # OK or MISSING for writes; OK for get
    invoke: int
    response: int


def _step(op: Op, state: bytes | None) -> tuple[bool, bytes | None]:
    kind = op.kind
    if kind == "get":
        return op.value == state, state
    if kind == "insert":
        return op.result == OK, op.value
    present = state is not None
    if op.result != (OK if present else MISSING):
        return False, state
    if not present:
        return True, None
    return True, (op.value if kind == "update" else None)


def check_key(ops: list[Op], initial: bytes | None = None) -> bool:
    events = []
    for i, op in enumerate(ops):
        if op.response < op.invoke:
            raise ValueError("operation returns before it is invoked")
        events.append((op.invoke, 0, i))
        events.append((op.response, 1, i))
    events.sort()
    configs: set[tuple[bytes | None, frozenset[int]]] = {(initial, frozenset())}
    pending: set[int] = set()
    for _, is_return, i in events:
        if not is_return:
            pending.add(i)
            continue
        reached: set[tuple[bytes | None, frozenset[int]]] = set()
        for start in configs:
            stack = [start]
            seen = {start}
            while stack:
                state, done = stack.pop()
                if i in done:
                    reached.add((state, done - {i}))
                    continue
                for j in pending - done:
                    ok, nxt = _step(ops[j], state)
                    if ok:
                        cfg = (nxt, done | {j})
                        if cfg not in seen:
                            seen.add(cfg)
                            stack.append(cfg)
        pending.discard(i)
        if not reached:
            return False
        configs = reached
    return True


def check(history: Iterable[Op], initial: dict[bytes, bytes] | None = None) -> list[bytes]:
    """Keys whose sub-history is not linearizable (empty list = linearizable)."""
    initial = initial or {}
    by_key: dict[bytes, list[Op]] = defaultdict(list)
    for op in history:
        by_key[op.key].append(op)
    return [key for key, ops in by_key.items() if not check_key(ops, initial.get(key))]
