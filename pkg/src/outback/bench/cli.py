"""``outback-bench`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from outback.bench.runner import BenchConfig, emit, emit_timeseries, run
from outback.bench.workload import MIXES, WorkloadSpec

# flag name -> (config key, type, default)
_OPTIONS = {
    "workload": (str, "C"),
    "dist": (str, "uniform"),
    "keys": (int, 10**6),
    "ops": (int, 10**5),
    "client_threads": (int, 1),
    "memnode_threads": (int, 2),
    "load_factor": (float, 0.95),
    "cache_capacity": (int, 4096),
    "transport": (str, "inproc"),
    "listen": (str, "127.0.0.1:0"),
    "csv": (str, "bench.csv"),
    "timeseries": (str, None),
    "seed": (int, 1),
    "no_oracle": (bool, False),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="outback-bench", description="Run a YCSB-style workload against a local shard.")
    p.add_argument("--config", type=Path, help="JSON file with the same keys as the flags (flags win)")
    p.add_argument("--workload", choices=sorted(MIXES))
    p.add_argument("--dist", choices=("uniform", "zipfian"))
    p.add_argument("--keys", type=int, help="preloaded keys (default 1000000)")
    p.add_argument("--ops", type=int, help="measured operations (default 100000)")
    p.add_argument("--client-threads", dest="client_threads", type=int)
    p.add_argument("--memnode-threads", dest="memnode_threads", type=int)
    p.add_argument("--load-factor", dest="load_factor", type=float)
    p.add_argument("--cache-capacity", dest="cache_capacity", type=int)
    p.add_argument("--transport", choices=("inproc", "tcp"))
    p.add_argument("--listen", help="TCP bind address host:port (tcp transport)")
    p.add_argument("--csv", help="output CSV path (default bench.csv)")
    p.add_argument("--timeseries", help="optional throughput time-series .dat path")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-oracle", dest="no_oracle", action="store_true", default=None, help="skip the shadow map")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args: argparse.Namespace) -> dict:
    merged = {name: default for name, (_, default) in _OPTIONS.items()}
    if args.config is not None:
        doc = json.loads(args.config.read_text())
        unknown = set(doc) - set(merged)
        if unknown:
            raise SystemExit(f"unknown config keys: {', '.join(sorted(unknown))}")
        for name, value in doc.items():
            kind = _OPTIONS[name][0]
            merged[name] = value if value is None else kind(value)
    for name in _OPTIONS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    opts = resolve(args)
    spec = WorkloadSpec(
        mix=opts["workload"],
        distribution=opts["dist"],
        keys=opts["keys"],
        ops=opts["ops"],
        threads=opts["client_threads"],
        seed=opts["seed"],
    )
    config = BenchConfig(
        workload=spec,
        memnode_threads=opts["memnode_threads"],
        load_factor=opts["load_factor"],
        cache_capacity=opts["cache_capacity"],
        transport=opts["transport"],
        listen=opts["listen"],
        oracle=not opts["no_oracle"],
        run_id=f"{spec.mix_name}-{spec.distribution}-{spec.seed}",
    )
    metrics = run(config)
    try:
        emit(metrics, opts["csv"], config)
        if opts["timeseries"]:
            emit_timeseries(metrics, opts["timeseries"])
    except OSError as exc:
        print(f"outback-bench: cannot write results: {exc}", file=sys.stderr)
        return 2
    print(
        f"{spec.mix_name}/{spec.distribution}: {metrics.throughput:,.0f} ops/s  "
        f"p50 {metrics.p50_us:.1f} us  p99 {metrics.p99_us:.1f} us  "
        f"trips/op {metrics.trips_per_op:.4f}  makeup {metrics.makeup_rate:.4f}  "
        f"resizes {metrics.resizes}  wrong reads {metrics.wrong_reads}  divergences {metrics.divergences}"
    )
    return 1 if metrics.wrong_reads or metrics.divergences or metrics.sweep_mismatches else 0


if __name__ == "__main__":
    raise SystemExit(main())
