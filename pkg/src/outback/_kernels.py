"""Compiled bulk kernels used when constructing tables.

Keys travel as a flat ``uint8`` buffer plus an ``int64`` offsets array
(``offsets[i]:offsets[i+1]`` is key ``i``).  ``xxh64`` here must stay
bit-identical to ``xxhash.xxh64_intdigest``; the per-key paths in
:mod:`outback.hashing` use the C library directly.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_P1 = np.uint64(0x9E3779B185EBCA87)
_P2 = np.uint64(0xC2B2AE3D27D4EB4F)
_P3 = np.uint64(0x165667B19E3779F9)
_P4 = np.uint64(0x85EBCA77C2B2AE63)
_P5 = np.uint64(0x27D4EB2F165667C5)
_ZERO = np.uint64(0)


@nb.njit(inline="always", cache=True)
def _rotl(x, r):
    return (x << np.uint64(r)) | (x >> np.uint64(64 - r))


@nb.njit(inline="always", cache=True)
def _read64(buf, p):
    v = np.uint64(0)
    for j in range(8):
        v |= np.uint64(buf[p + j]) << np.uint64(8 * j)
    return v


@nb.njit(inline="always", cache=True)
def _round(acc, lane):
    acc = acc + lane * _P2
    acc = _rotl(acc, 31)
    return acc * _P1


@nb.njit(inline="always", cache=True)
def _merge(h, v):
    h ^= _round(_ZERO, v)
    return h * _P1 + _P4


@nb.njit(cache=True)
def xxh64(buf, start, length, seed):
    p = start
    end = start + length
    if length >= 32:
        v1 = seed + _P1 + _P2
        v2 = seed + _P2
        v3 = seed
        v4 = seed - _P1
        limit = end - 32
        while p <= limit:
            v1 = _round(v1, _read64(buf, p))
            v2 = _round(v2, _read64(buf, p + 8))
            v3 = _round(v3, _read64(buf, p + 16))
            v4 = _round(v4, _read64(buf, p + 24))
            p += 32
        h = _rotl(v1, 1) + _rotl(v2, 7) + _rotl(v3, 12) + _rotl(v4, 18)
        h = _merge(h, v1)
        h = _merge(h, v2)
        h = _merge(h, v3)
        h = _merge(h, v4)
    else:
        h = seed + _P5
    h += np.uint64(length)
    while p + 8 <= end:
        h ^= _round(_ZERO, _read64(buf, p))
        h = _rotl(h, 27) * _P1 + _P4
        p += 8
    if p + 4 <= end:
        v = np.uint64(0)
        for j in range(4):
            v |= np.uint64(buf[p + j]) << np.uint64(8 * j)
        h ^= v * _P1
        h = _rotl(h, 23) * _P2 + _P3
        p += 4
    while p < end:
        h ^= np.uint64(buf[p]) * _P5
        h = _rotl(h, 11) * _P1
        p += 1
    h ^= h >> np.uint64(33)
    h *= _P2
    h ^= h >> np.uint64(29)
    h *= _P3
    h ^= h >> np.uint64(32)
    return h


@nb.njit(cache=True)
def digest_many(buf, offsets, seed):
    n = offsets.shape[0] - 1
    out = np.empty(n, np.uint64)
    for i in range(n):
        out[i] = xxh64(buf, offsets[i], offsets[i + 1] - offsets[i], seed)
    return out


@nb.njit(cache=True)
def reduce_many(buf, offsets, seed, modulus):
    n = offsets.shape[0] - 1
    out = np.empty(n, np.int64)
    m = np.uint64(modulus)
    for i in range(n):
        out[i] = np.int64(xxh64(buf, offsets[i], offsets[i + 1] - offsets[i], seed) % m)
    return out


@nb.njit(inline="always", cache=True)
def _xorshift(state):
    state ^= state << np.uint64(13)
    state ^= state >> np.uint64(7)
    state ^= state << np.uint64(17)
    return state


@nb.njit(cache=True)
def assign_buckets(b0, b1, bucket_count, max_steps, rng_seed):
    """Two-choice placement with random-walk displacement.

    Returns ``(members, counts, where, homeless)``: ``members`` is a
    ``bucket_count * 4`` array of key indices (-1 marks a free slot, filled
    left to right), ``where[i]`` the bucket of key ``i`` or -1, and
    ``homeless`` the keys left over when a walk hit ``max_steps``.
    """
    n = b0.shape[0]
    members = np.full(bucket_count * 4, -1, np.int64)
    counts = np.zeros(bucket_count, np.int64)
    where = np.full(n, -1, np.int64)
    homeless = np.empty(n, np.int64)
    n_homeless = 0
    state = np.uint64(rng_seed) | np.uint64(1)
    for i in range(n):
        cur = i
        prev = -1
        placed = False
        for _ in range(max_steps):
            c0 = b0[cur]
            c1 = b1[cur]
            n0 = counts[c0]
            n1 = counts[c1]
            if n0 < 4 or n1 < 4:
                if n0 < 4 and (n0 <= n1 or n1 >= 4):
                    b = c0
                else:
                    b = c1
                members[b * 4 + counts[b]] = cur
                counts[b] += 1
                where[cur] = b
                placed = True
                break
            if prev == c0:
                b = c1
            elif prev == c1:
                b = c0
            else:
                state = _xorshift(state)
                b = c0 if (state & np.uint64(1)) == 0 else c1
            state = _xorshift(state)
            r = np.int64(state % np.uint64(4))
            victim = members[b * 4 + r]
            members[b * 4 + r] = cur
            where[cur] = b
            where[victim] = -1
            cur = victim
            prev = b
        if not placed:
            homeless[n_homeless] = cur
            n_homeless += 1
    return members, counts, where, homeless[:n_homeless]


@nb.njit(cache=True)
def _first_seed(buf, offsets, idx, k, slot_base):
    for s in range(256):
        seed = slot_base + np.uint64(s)
        mask = 0
        ok = True
        for j in range(k):
            key = idx[j]
            sl = np.int64(xxh64(buf, offsets[key], offsets[key + 1] - offsets[key], seed) & np.uint64(3))
            bit = 1 << sl
            if mask & bit:
                ok = False
                break
            mask |= bit
        if ok:
            return s
    return -1


@nb.njit(cache=True)
def search_seeds(buf, offsets, members, counts, slot_base):
    """Smallest separating seed per bucket.

    A bucket with no separating seed sheds its last member until one
    exists; shed keys are flagged in ``ejected``.  ``slots[i]`` is the
    slot of key ``i`` under its bucket's seed (-1 when ejected or
    unplaced).
    """
    bucket_count = counts.shape[0]
    n = offsets.shape[0] - 1
    seeds = np.zeros(bucket_count, np.uint8)
    slots = np.full(n, -1, np.int64)
    ejected = np.zeros(n, np.bool_)
    idx = np.empty(4, np.int64)
    for b in range(bucket_count):
        k = counts[b]
        for j in range(k):
            idx[j] = members[b * 4 + j]
        s = -1
        while k > 0:
            s = _first_seed(buf, offsets, idx, k, slot_base)
            if s >= 0:
                break
            k -= 1
            ejected[idx[k]] = True
        if k == 0:
            continue
        seeds[b] = s
        seed = slot_base + np.uint64(s)
        for j in range(k):
            key = idx[j]
            slots[key] = np.int64(xxh64(buf, offsets[key], offsets[key + 1] - offsets[key], seed) & np.uint64(3))
    return seeds, slots, ejected


@nb.njit(inline="always", cache=True)
def _find(parent, parity, x):
    root = x
    p = np.uint8(0)
    while parent[root] != root:
        p ^= parity[root]
        root = parent[root]
    cur = x
    cp = p
    while cur != root:
        nxt = parent[cur]
        nxt_p = cp ^ parity[cur]
        parent[cur] = root
        parity[cur] = cp
        cur = nxt
        cp = nxt_p
    return root, p


@nb.njit(cache=True)
def othello_values(ea, eb, bits, m_a, m_b):
    """Vertex bits for the bipartite graph ``ea[i] -- m_a + eb[i]``.

    Union-find with parity: every edge constrains its endpoints to XOR to
    ``bits[i]``.  Returns ``(ok, values)``; ``ok`` is false as soon as an
    edge closes a cycle.  Vertices touched by no edge keep value 0.
    """
    total = m_a + m_b
    parent = np.arange(total).astype(np.int32)
    parity = np.zeros(total, np.uint8)
    size = np.ones(total, np.int32)
    values = np.zeros(total, np.uint8)
    for i in range(ea.shape[0]):
        u = np.int32(ea[i])
        v = np.int32(m_a + eb[i])
        ru, pu = _find(parent, parity, u)
        rv, pv = _find(parent, parity, v)
        if ru == rv:
            return False, values
        link = pu ^ pv ^ np.uint8(bits[i])
        if size[ru] < size[rv]:
            parent[ru] = rv
            parity[ru] = link
            size[rv] += size[ru]
        else:
            parent[rv] = ru
            parity[rv] = link
            size[ru] += size[rv]
    for x in range(total):
        _, p = _find(parent, parity, np.int32(x))
        values[x] = p
    return True, values
