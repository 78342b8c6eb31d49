"""Preconditioning, the measured run, the shadow oracle and result emission."""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from outback.bench.workload import (
    DELETE,
    GET,
    INSERT,
    UPDATE,
    OpStream,
    WorkloadSpec,
    key_of,
    op_streams,
    tag_of,
    value_of,
)
from outback.client import Client
from outback.errors import NotFound
from outback.memnode.engine import MemNodeConfig
from outback.system import LocalShard

CSV_COLUMNS = (
    "run",
    "workload",
    "distribution",
    "keys",
    "ops",
    "client_threads",
    "memnode_threads",
    "load_factor",
    "cache_capacity",
    "transport",
    "seed",
    "metric",
    "value",
)


@dataclass
class BenchConfig:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    memnode_threads: int = 2
    load_factor: float = 0.95
    cache_capacity: int = 4096
    transport: str = "inproc"
    listen: str = "127.0.0.1:0"
    oracle: bool = True
    sweep: bool = True
    bin_width: float = 0.2
    resize_enabled: bool = True
    finalize_interval: float = 0.5
    min_buckets: int = 256
    run_id: str = "run"


@dataclass
class Metrics:
    ops: int = 0
    elapsed: float = 0.0
    throughput: float = 0.0
    p50_us: float = 0.0
    p99_us: float = 0.0
    trips_per_op: float = 0.0
    max_get_trips: int = 0
    makeup_rate: float = 0.0
    refused: int = 0
    buffered: int = 0
    resizes: int = 0
    wrong_reads: int = 0
    divergences: int = 0
    missing_preexisting: int = 0
    deferred_reads: int = 0
    sweep_checked: int = 0
    sweep_mismatches: int = 0
    compute_bytes: int = 0
    memnode_index_bits: int = 0
    timeseries: list[tuple[float, float]] = field(default_factory=list)
    resize_events: list[dict[str, float]] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        out = asdict(self)
        out.pop("timeseries")
        out.pop("resize_events")
        return out


def precondition(
    n: int,
    config: BenchConfig | None = None,
    *,
    compute_nodes: int = 1,
) -> LocalShard:
    """Shard bulk-loaded with keys ``key_of(0..n-1)`` at the configured load factor."""
    cfg = config or BenchConfig()
    ks, vs = cfg.workload.key_size, cfg.workload.value_size
    keys = [key_of(i, ks) for i in range(n)]
    values = [value_of(i, 0, vs) for i in range(n)]
    mn_config = MemNodeConfig(
        load_factor=cfg.load_factor,
        cache_capacity=cfg.cache_capacity,
        compute_nodes=compute_nodes,
        resize_enabled=cfg.resize_enabled,
        finalize_interval=cfg.finalize_interval,
        min_buckets=cfg.min_buckets,
    )
    shard = LocalShard.start(keys, values, config=mn_config, workers=cfg.memnode_threads, tcp=cfg.transport == "tcp")
    return shard


@dataclass
class _ThreadResult:
    latencies: np.ndarray
    finished: np.ndarray
    shadow: dict[bytes, bytes]
    wrong_reads: int = 0
    divergences: int = 0
    missing: int = 0
    deferred: int = 0
    max_get_trips: int = 0
    error: BaseException | None = None


def _owned(i: int, thread: int, threads: int) -> bool:
    return threads == 1 or i % threads == thread


def _drive(
    client: Client,
    stream: OpStream,
    spec: WorkloadSpec,
    thread: int,
    shadow: dict[bytes, bytes] | None,
    preloaded_stable: bool,
    start: threading.Barrier,
) -> _ThreadResult:
    n = len(stream)
    res = _ThreadResult(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.float64), shadow if shadow is not None else {})
    kinds = stream.kinds.tolist()
    targets = stream.targets.tolist()
    ks, vs, threads = spec.key_size, spec.value_size, spec.threads
    check = shadow is not None
    clock = time.perf_counter_ns
    endpoint = client.endpoint
    start.wait()
    try:
        for j in range(n):
            kind = kinds[j]
            i = targets[j]
            key = key_of(i, ks)
            t0 = clock()
            if kind == GET:
                pending = False
                trips = endpoint.data_round_trips
                try:
                    got = client.get(key)
                except NotFound as exc:
                    got = None
                    pending = exc.pending
                t1 = clock()
                trips = endpoint.data_round_trips - trips
                if trips > res.max_get_trips:
                    res.max_get_trips = trips
                if got is not None and tag_of(got) != i & 0xFFFFFFFF:
                    res.wrong_reads += 1
                if pending:
                    res.deferred += 1
                elif check and _owned(i, thread, threads):
                    if got != shadow.get(key):
                        res.divergences += 1
                elif got is None and preloaded_stable and i < spec.keys:
                    res.missing += 1
            else:
                value = value_of(i, j + 1, vs)
                if kind == INSERT:
                    client.insert(key, value)
                    t1 = clock()
                    if check:
                        shadow[key] = value
                else:
                    try:
                        if kind == UPDATE:
                            client.update(key, value)
                        else:
                            client.delete(key)
                        present = True
                    except NotFound:
                        present = False
                    t1 = clock()
                    if check:
                        if present != (key in shadow) and not client.is_pending(key):
                            res.divergences += 1
                        if key in shadow:
                            if kind == UPDATE:
                                shadow[key] = value
                            else:
                                del shadow[key]
            res.latencies[j] = t1 - t0
            res.finished[j] = time.monotonic()
    except BaseException as exc:  # reported by run()
        res.error = exc
    return res


def throughput_series(finished: np.ndarray, start: float, bin_width: float) -> list[tuple[float, float]]:
    if finished.size == 0:
        return []
    rel = finished - start
    edges = np.arange(0.0, rel.max() + bin_width, bin_width)
    if edges.size < 2:
        edges = np.array([0.0, bin_width])
    counts, _ = np.histogram(rel, bins=edges)
    return [(float(edges[k]), float(counts[k] / bin_width)) for k in range(counts.size)]


def run(config: BenchConfig, shard: LocalShard | None = None) -> Metrics:
    """Precondition (unless ``shard`` is given), execute the mix and collect metrics."""
    spec = config.workload
    own_shard = shard is None
    if shard is None:
        shard = precondition(spec.keys, config, compute_nodes=spec.threads)
    try:
        return _run(config, shard)
    finally:
        if own_shard:
            shard.close()


def _run(config: BenchConfig, shard: LocalShard) -> Metrics:
    spec = config.workload
    streams = op_streams(spec)
    while len(shard.clients) < spec.threads:
        shard.client()
    clients = shard.clients[: spec.threads]
    shadows: list[dict[bytes, bytes] | None] = [None] * spec.threads
    if config.oracle:
        for t in range(spec.threads):
            shadows[t] = {
                key_of(i, spec.key_size): value_of(i, 0, spec.value_size)
                for i in range(t if spec.threads > 1 else 0, spec.keys, spec.threads)
            }
    preloaded_stable = spec.ratios["delete"] == 0.0
    base_trips = [c.endpoint.data_round_trips for c in clients]
    base_stats = [c.stats() for c in clients]
    resizes_before = len(shard.memnode.resizes)
    barrier = threading.Barrier(spec.threads + 1)
    results: list[_ThreadResult | None] = [None] * spec.threads

    def body(t: int) -> None:
        results[t] = _drive(clients[t], streams[t], spec, t, shadows[t], preloaded_stable, barrier)

    threads = [threading.Thread(target=body, args=(t,), name=f"bench-{t}") for t in range(spec.threads)]
    for th in threads:
        th.start()
    barrier.wait()
    start = time.monotonic()
    for th in threads:
        th.join()
    elapsed = time.monotonic() - start
    for r in results:
        if r is not None and r.error is not None:
            raise r.error

    m = Metrics(ops=spec.ops, elapsed=elapsed, throughput=spec.ops / elapsed if elapsed else 0.0)
    lat = np.concatenate([r.latencies for r in results]) if spec.ops else np.zeros(1)
    m.p50_us = float(np.percentile(lat, 50) / 1e3)
    m.p99_us = float(np.percentile(lat, 99) / 1e3)
    trips = sum(c.endpoint.data_round_trips - b for c, b in zip(clients, base_trips))
    m.trips_per_op = trips / spec.ops if spec.ops else 0.0
    stats = [c.stats() for c in clients]
    gets = sum(s.get("gets", 0) - b.get("gets", 0) for s, b in zip(stats, base_stats))
    makeups = sum(s.get("makeups", 0) - b.get("makeups", 0) for s, b in zip(stats, base_stats))
    m.max_get_trips = max(r.max_get_trips for r in results)
    m.makeup_rate = makeups / gets if gets else 0.0
    m.refused = sum(s.get("refused", 0) - b.get("refused", 0) for s, b in zip(stats, base_stats))
    m.buffered = sum(s.get("buffered", 0) - b.get("buffered", 0) for s, b in zip(stats, base_stats))
    m.wrong_reads = sum(r.wrong_reads for r in results)
    m.divergences = sum(r.divergences for r in results)
    m.missing_preexisting = sum(r.missing for r in results)
    m.deferred_reads = sum(r.deferred for r in results)
    m.timeseries = throughput_series(np.concatenate([r.finished for r in results]), start, config.bin_width)

    settle(shard)
    events = shard.memnode.resizes[resizes_before:]
    m.resizes = len(events)
    m.resize_events = [{k: (v - start if isinstance(v, float) else v) for k, v in e.items()} for e in events]
    m.compute_bytes = clients[0].index.nbytes
    m.memnode_index_bits = shard.memnode.index_bits()
    if config.oracle and config.sweep:
        merged: dict[bytes, bytes] = {}
        for s in shadows:
            merged.update(s)
        touched = {key_of(int(i), spec.key_size) for st in streams for i in np.unique(st.targets)}
        touched.update(key_of(i, spec.key_size) for i in range(spec.keys))
        m.sweep_checked, m.sweep_mismatches = sweep(clients[0], merged, touched)
    return m


def settle(shard: LocalShard, timeout: float = 60.0) -> None:
    """Wait until no resize is running and every client has caught up."""
    deadline = time.monotonic() + timeout
    while True:
        shard.memnode.wait_idle(max(0.0, deadline - time.monotonic()))
        for c in shard.clients:
            c.wait_resize(max(0.0, deadline - time.monotonic()))
        if shard.memnode.phase.value == "idle" or time.monotonic() > deadline:
            return


def sweep(client: Client, expected: dict[bytes, bytes], keys) -> tuple[int, int]:
    """Read every key in ``keys`` and compare with ``expected`` (absent means NotFound)."""
    mismatches = 0
    checked = 0
    for key in keys:
        try:
            got = client.get(key)
        except NotFound:
            got = None
        checked += 1
        if got != expected.get(key):
            mismatches += 1
    return checked, mismatches


def emit(metrics: Metrics, path: str | Path, config: BenchConfig) -> Path:
    """Write one long-format CSV row per metric (see README for the schema)."""
    path = Path(path)
    spec = config.workload
    fixed = [
        config.run_id,
        spec.mix_name,
        spec.distribution,
        spec.keys,
        spec.ops,
        spec.threads,
        config.memnode_threads,
        config.load_factor,
        config.cache_capacity,
        config.transport,
        spec.seed,
    ]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for name, value in metrics.scalars().items():
            writer.writerow([*fixed, name, f"{value:.6g}" if isinstance(value, float) else value])
    return path


def emit_timeseries(metrics: Metrics, path: str | Path) -> Path:
    """Gnuplot-friendly ``t ops_per_s`` columns; resize phases as comment lines."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# t_seconds ops_per_second\n")
        for event in metrics.resize_events:
            fh.write("# resize " + " ".join(f"{k}={v:.3f}" for k, v in event.items()) + "\n")
        for t, ops in metrics.timeseries:
            fh.write(f"{t:.3f} {ops:.1f}\n")
    return path


def recovery(metrics: Metrics, event: dict[str, float], window: float = 2.0) -> dict[str, float]:
    """Pre-resize level, deepest dip during the resize and best bin within ``window`` after finalize."""
    series = metrics.timeseries
    begin, end = event["pre_resize"], event["idle"]
    width = series[1][0] - series[0][0] if len(series) > 1 else 1.0
    before = [v for t, v in series if begin - window <= t and t + width <= begin]
    during = [v for t, v in series if t + width > begin and t < end]
    after = [v for t, v in series if end <= t <= end + window and t + width <= series[-1][0]]
    pre = float(np.median(before)) if before else float("nan")
    dip = 1.0 - min(during) / pre if during and before else float("nan")
    best = max(after) if after else float("nan")
    return {"pre_level": pre, "dip": dip, "post_best": best, "recovered": best >= 0.95 * pre if after and before else False}
