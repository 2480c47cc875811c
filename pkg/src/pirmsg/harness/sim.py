"""Discrete-event driver: real clients and a real in-process cluster on a simulated clock."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable

from .. import crypto
from ..client import Client, SchedulerConfig, Scheduler
from ..config import Config, ServerKeys
from ..links import LocalLink, Tap
from ..server import Cluster


@dataclass
class SimClock:
    now: float = 0.0

    def __call__(self) -> float:
        return self.now


@dataclass
class ByteMeter:
    """Counts client-side wire bytes per client (frame header included)."""

    sent: dict[int, int] = field(default_factory=dict)
    received: dict[int, int] = field(default_factory=dict)
    by_kind: dict[int, list[int]] = field(default_factory=dict)

    def tap_for(self, idx: int, inner: Tap | None = None) -> Tap:
        self.sent.setdefault(idx, 0)
        self.received.setdefault(idx, 0)

        def tap(direction, frame):
            n = len(frame.payload) + 5
            if direction == "out":
                self.sent[idx] += n
            else:
                self.received[idx] += n
            tally = self.by_kind.setdefault(frame.kind, [0, 0])
            tally[0] += 1
            tally[1] += n
            if inner:
                inner(direction, frame)

        return tap

    def mean_frame(self, kind: int) -> float:
        count, total = self.by_kind.get(kind, (0, 0))
        return total / count if count else 0.0

    @property
    def total(self) -> int:
        return sum(self.sent.values()) + sum(self.received.values())


class Simulation:
    """``m`` clients ticking on fixed schedules against one cluster.

    Args:
        cfg: deployment config (server list optional; keys are derived from ``seed``).
        m: number of clients.
        sched: scheduler settings shared by all clients.
        seed: pins server keys, client randomness and tick phases.
        taps: optional per-client tap factory ``idx -> Tap``.
        enforce_rate: apply the leader's per-client write rate limit.
        record_digests: keep a state digest per sealed epoch on every replica.
    """

    def __init__(self, cfg: Config, m: int, sched: SchedulerConfig, seed: int = 0,
                 taps: Callable[[int], Tap | None] | None = None, enforce_rate: bool = True, record_digests: bool = False):
        self.clock = SimClock()
        root = crypto.Drbg(seed)
        keys = [ServerKeys.from_seed(root.randbytes(32)) for _ in range(cfg.l)]
        if cfg.servers:
            cfg = cfg.replace(servers=())
        self.cluster = Cluster(cfg, keys, clock=self.clock, enforce_rate=enforce_rate)
        self.cfg = self.cluster.cfg
        for r in self.cluster.replicas:
            r.record_digests = record_digests
        self.meter = ByteMeter()
        self.delivery_log: list[tuple[float, int, bytes, int, bytes]] = []
        self.clients: list[Client] = []
        self.schedulers: list[Scheduler] = []
        self._events: list = []
        self._counter = itertools.count()
        for i in range(m):
            inner = taps(i) if taps else None
            link = LocalLink(self.cfg, self.cluster.leader, i.to_bytes(8, "big"), self.meter.tap_for(i, inner))
            c = Client(self.cfg, link, sched, seed=root.randbytes(16), clock=self.clock,
                       on_deliver=self._deliver_cb(i))
            self.clients.append(c)
            s = Scheduler(sched, root.fork(b"sched%d" % i), 0.0)
            self.schedulers.append(s)
            self._push(s.write_time(0), ("write", i, 0))
            self._push(s.read_time(0), ("read", i, 0))
        self._push(self.cfg.seal_interval, ("seal", 0, 1))

    def _deliver_cb(self, idx: int):
        def cb(log_id, seqno, message):
            self.delivery_log.append((self.clock.now, idx, log_id, seqno, message))
        return cb

    def _push(self, t: float, ev):
        heapq.heappush(self._events, (t, next(self._counter), ev))

    def at(self, t: float, fn: Callable[[], None]):
        """Run ``fn`` at simulated time ``t``."""
        self._push(t, ("call", fn, 0))

    def run_until(self, t_end: float, stop: Callable[[], bool] | None = None):
        while self._events and self._events[0][0] <= t_end:
            t, _, (kind, a, k) = heapq.heappop(self._events)
            self.clock.now = max(self.clock.now, t)
            if kind == "write":
                self.clients[a].write_tick()
                self._push(self.schedulers[a].write_time(k + 1), ("write", a, k + 1))
            elif kind == "read":
                self.clients[a].read_tick()
                self._push(self.schedulers[a].read_time(k + 1), ("read", a, k + 1))
            elif kind == "seal":
                self.cluster.leader.tick()
                self._push((k + 1) * self.cfg.seal_interval, ("seal", 0, k + 1))
            elif kind == "call":
                a()
            if stop is not None and kind == "read" and stop():
                break
        else:
            self.clock.now = max(self.clock.now, t_end)
