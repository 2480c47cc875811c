"""CPU cost of answering reads as the table grows."""

from __future__ import annotations

import statistics
import time

import numpy as np

from .. import crypto, pir
from ..client import Client
from ..config import Config, ServerKeys
from ..server import Cluster

DEFAULT_SIZES = (10_000, 100_000)


class _NoLink:
    def read(self, req):  # pragma: no cover - never used; requests are built only
        raise RuntimeError


def bench_pir(n: int, z: int = 1024, reads: int = 20, warmup: int = 2, seed: int = 0) -> dict:
    """Time ``Leader.process_read`` on a full table of ``n`` messages.

    Every replica gets the same random snapshot (as honest replicas would hold
    after the same writes) instead of replaying ``n`` inserts.

    Returns:
        dict with table geometry and mean/median/min milliseconds per read,
        both wall-clock and process CPU time.
    """
    cfg = Config(n=n, z=z)
    root = crypto.Drbg(b"bench" + seed.to_bytes(8, "big"))
    keys = [ServerKeys.from_seed(root.randbytes(32)) for _ in range(cfg.l)]
    cluster = Cluster(cfg, keys, enforce_rate=False)
    cfg = cluster.cfg
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 256, size=(cfg.b, cfg.bucket_len), dtype=np.uint8)
    snap = pir.Snapshot(1, data)
    for r in cluster.replicas:
        r.snapshots.clear()
        r.snapshots[1] = snap
    cluster.leader.read_epoch = 1
    client = Client(cfg, _NoLink(), seed=root.randbytes(32))

    wall, cpu = [], []
    for k in range(warmup + reads):
        req, seeds = client.build_read(int(rng.integers(cfg.b)))
        w0, c0 = time.perf_counter(), time.process_time()
        combined = cluster.leader.process_read(req)
        w1, c1 = time.perf_counter(), time.process_time()
        if k >= warmup:
            wall.append((w1 - w0) * 1e3)
            cpu.append((c1 - c0) * 1e3)
        if k == 0:
            # Sanity check: the unmasked reply is the requested bucket.
            target = _target_of(req, cluster, cfg)
            if pir.unmask(combined, seeds) != snap.bucket(target):
                raise AssertionError("benchmark read did not reconstruct its bucket")
    return {
        "n": n, "z": z, "b": cfg.b, "d": cfg.d, "db_bytes": cfg.b * cfg.bucket_len, "reads": reads,
        "mean_ms": statistics.fmean(wall), "median_ms": statistics.median(wall), "min_ms": min(wall),
        "cpu_mean_ms": statistics.fmean(cpu),
    }


def _target_of(req, cluster: Cluster, cfg: Config) -> int:
    qs = []
    for r in cluster.replicas:
        plain = crypto.pk_open_many(r.keys.box, req.eph_public, r.index, req.blobs[r.index])
        qs.append(pir.decode_query(plain[:cfg.query_bytes], cfg.b))
    return int(np.flatnonzero(np.logical_xor.reduce(qs))[0])


def scaling_ratio(small: dict, large: dict) -> float:
    return large["mean_ms"] / small["mean_ms"]


def format_bench(rows: list[dict]) -> str:
    head = f"{'n':>10} {'b':>8} {'db MiB':>8} {'mean ms':>9} {'median':>8} {'cpu ms':>8}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['n']:>10,} {r['b']:>8,} {r['db_bytes'] / 2**20:>8.1f} {r['mean_ms']:>9.2f} "
                     f"{r['median_ms']:>8.2f} {r['cpu_mean_ms']:>8.2f}")
    if len(rows) >= 2:
        lines.append(f"ratio {rows[-1]['n']:,}/{rows[0]['n']:,}: {scaling_ratio(rows[0], rows[-1]):.2f}")
    return "\n".join(lines)
