"""Workload specification, key distributions and per-thread op streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIXES: dict[str, dict[str, float]] = {
    "A": {"update": 0.5, "get": 0.5},
    "B": {"update": 0.05, "get": 0.95},
    "C": {"get": 1.0},
    "D": {"insert": 0.05, "get": 0.95},
    "F": {"insert": 0.25, "update": 0.25, "get": 0.5},
}
OP_KINDS = ("get", "insert", "update", "delete")
GET, INSERT, UPDATE, DELETE = range(4)
ZIPF_THETA = 0.99


@dataclass
class WorkloadSpec:
    mix: str | dict[str, float] = "C"
    distribution: str = "uniform"
    keys: int = 10**6
    ops: int = 10**5
    threads: int = 1
    key_size: int = 8
    value_size: int = 8
    seed: int = 1
    key_space: int | None = None  # all ops draw from [0, key_space) when set
    duration: float | None = None
    ratios: dict[str, float] = field(init=False)

    def __post_init__(self) -> None:
        ratios = MIXES[self.mix] if isinstance(self.mix, str) else dict(self.mix)
        if isinstance(self.mix, str) and self.mix not in MIXES:
            raise ValueError(f"unknown mix {self.mix!r}")
        unknown = set(ratios) - set(OP_KINDS)
        if unknown:
            raise ValueError(f"unknown op kinds {sorted(unknown)}")
        if any(r < 0 for r in ratios.values()) or not math.isclose(sum(ratios.values()), 1.0, abs_tol=1e-9):
            raise ValueError("mix ratios must be non-negative and sum to 1")
        if self.distribution not in ("uniform", "zipfian"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.key_size < 8 or self.value_size < 8:
            raise ValueError("keys and values are at least 8 bytes")
        if self.threads < 1 or self.ops < 0 or self.keys < 0:
            raise ValueError("threads >= 1, ops and keys >= 0")
        self.ratios = {k: float(ratios.get(k, 0.0)) for k in OP_KINDS}

    @property
    def mix_name(self) -> str:
        return self.mix if isinstance(self.mix, str) else "custom"


def zeta(n: int, theta: float) -> float:
    total = 0.0
    for start in range(1, n + 1, 1 << 22):
        stop = min(n + 1, start + (1 << 22))
        total += float(np.sum(np.arange(start, stop, dtype=np.float64) ** -theta))
    return total


class Zipfian:
    """Rank sampler over ``[0, n)`` with ``P(rank i) ~ 1 / (i + 1)^theta`` (Gray et al.)."""

    def __init__(self, n: int, theta: float = ZIPF_THETA):
        if n < 1:
            raise ValueError("zipfian needs at least one item")
        self.n = n
        self.theta = theta
        self.zetan = zeta(n, theta)
        zeta2 = 1.0 + 0.5**theta
        self.alpha = 1.0 / (1.0 - theta)
        self.eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - zeta2 / self.zetan) if n > 1 else 1.0
        self._half_pow = 0.5**theta

    def ranks(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        uz = u * self.zetan
        spread = (self.n * (self.eta * u - self.eta + 1.0) ** self.alpha).astype(np.int64)
        out = np.where(uz < 1.0, 0, np.where(uz < 1.0 + self._half_pow, 1, spread))
        return np.minimum(out, self.n - 1)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    x ^= x >> np.uint64(33)
    x *= np.uint64(0xFF51AFD7ED558CCD)
    x ^= x >> np.uint64(33)
    x *= np.uint64(0xC4CEB9FE1A85EC53)
    x ^= x >> np.uint64(33)
    return x


class KeyChooser:
    def __init__(self, n: int, distribution: str):
        self.n = n
        self.distribution = distribution
        self._zipf = Zipfian(n) if distribution == "zipfian" and n > 0 else None

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.n == 0:
            return np.zeros(size, dtype=np.int64)
        if self._zipf is None:
            return rng.integers(0, self.n, size, dtype=np.int64)
        # scatter popular ranks across the key space
        return (_mix64(self._zipf.ranks(rng, size)) % np.uint64(self.n)).astype(np.int64)


def key_of(i: int, size: int = 8) -> bytes:
    return (i + 1).to_bytes(size, "big")


def index_of(key: bytes) -> int:
    return int.from_bytes(key, "big") - 1


def value_of(i: int, version: int, size: int = 8) -> bytes:
    """``key tag (4 B) | write counter (4 B)`` padded to ``size``; lets readers spot wrong-key reads."""
    return (i & 0xFFFFFFFF).to_bytes(4, "little") + (version & 0xFFFFFFFF).to_bytes(4, "little") + bytes(size - 8)


def tag_of(value: bytes) -> int:
    return int.from_bytes(value[:4], "little")


@dataclass
class OpStream:
    kinds: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.kinds.size


def op_streams(spec: WorkloadSpec) -> list[OpStream]:
    """One deterministic stream per thread.

    Without ``key_space``, reads/updates/deletes target the ``keys``
    preloaded items and inserts use fresh ids partitioned by thread.  With
    ``key_space`` every op draws from the same universe; when several
    threads run, writes stay in the thread's residue class so each key
    has a single writer.
    """
    probs = np.array([spec.ratios[k] for k in OP_KINDS])
    per_thread = [spec.ops // spec.threads + (t < spec.ops % spec.threads) for t in range(spec.threads)]
    universe = spec.key_space if spec.key_space is not None else spec.keys
    chooser = KeyChooser(universe, spec.distribution)
    streams = []
    for t, count in enumerate(per_thread):
        rng = np.random.default_rng([spec.seed, t])
        kinds = rng.choice(4, size=count, p=probs).astype(np.int8)
        targets = chooser.sample(rng, count)
        if spec.key_space is None:
            inserts = np.flatnonzero(kinds == INSERT)
            targets[inserts] = spec.keys + t + spec.threads * np.arange(inserts.size)
            writes = (kinds == UPDATE) | (kinds == DELETE)
        else:
            writes = kinds != GET
        if spec.threads > 1 and universe >= spec.threads:
            owned = targets[writes] - targets[writes] % spec.threads + t
            targets[writes] = np.where(owned >= universe, owned - spec.threads, owned)
        streams.append(OpStream(kinds, targets))
    return streams
