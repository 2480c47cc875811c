"""Chat-log replay: latency, delivery and bandwidth measurements on the simulator.

Log format, one message per line::

    2016-03-01T12:00:05<TAB>#channel<TAB>sender<TAB>text

Each (channel, sender) pair gets its own log; every other sender seen in the
channel subscribes to it.
"""

from __future__ import annotations

import math
import random
import statistics
import time
from dataclasses import dataclass, asdict
from datetime import datetime, timedelta, timezone
from typing import Iterable

from .. import paramtool
from ..client import SchedulerConfig
from ..config import Config
from ..errors import ParseError
from ..transport import Kind
from .sim import Simulation


@dataclass(frozen=True)
class ChatLine:
    ts: datetime
    channel: str
    sender: str
    text: str


def parse_chat_log(lines: Iterable[str]) -> list[ChatLine]:
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t", 3)
        if len(parts) != 4:
            raise ParseError(lineno, "expected 4 tab-separated fields")
        ts_s, channel, sender, text = parts
        try:
            ts = datetime.fromisoformat(ts_s.replace("Z", "+00:00"))
        except ValueError:
            raise ParseError(lineno, f"bad timestamp {ts_s!r}") from None
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        if not channel or not sender:
            raise ParseError(lineno, "empty channel or sender")
        out.append(ChatLine(ts, channel, sender, text))
    out.sort(key=lambda c: c.ts)
    return out


def format_chat_line(c: ChatLine) -> str:
    return f"{c.ts.isoformat()}\t{c.channel}\t{c.sender}\t{c.text}"


def generate_chat(n_messages: int, users: int, channels: int = 1, mean_gap: float = 1.0,
                  zipf_a: float = 1.2, members_per_channel: int | None = None, seed: int = 0,
                  start: datetime | None = None) -> list[ChatLine]:
    """Synthetic log with Zipf-distributed channel activity and exponential gaps."""
    rng = random.Random(seed)
    start = start or datetime(2016, 1, 1, tzinfo=timezone.utc)
    names = [f"user{i}" for i in range(users)]
    per = members_per_channel or users
    chans = {}
    for c in range(channels):
        if per >= users:
            chans[f"#chan{c}"] = list(names)
        else:
            chans[f"#chan{c}"] = [names[(c * per + k) % users] for k in range(per)]
    weights = [1 / (k + 1) ** zipf_a for k in range(channels)]
    t = start
    out = []
    keys = list(chans)
    for i in range(n_messages):
        t = t + timedelta(seconds=rng.expovariate(1 / mean_gap))
        ch = rng.choices(keys, weights)[0]
        out.append(ChatLine(t, ch, rng.choice(chans[ch]), f"msg {i} " + "x" * rng.randint(0, 40)))
    return out


@dataclass
class ReplayReport:
    messages: int = 0
    expected_deliveries: int = 0
    delivered: int = 0
    latency_mean: float = 0.0
    latency_p50: float = 0.0
    latency_p95: float = 0.0
    latency_p99: float = 0.0
    latency_max: float = 0.0
    ttl: float = 0.0
    bytes_per_client_day: float = 0.0
    closed_form_bytes_per_client_day: float = 0.0
    server_reads_per_sec: float = 0.0
    wall_reads_per_sec: float = 0.0
    sim_seconds: float = 0.0
    clients: int = 0
    read_interval: float = 0.0
    write_interval: float = 0.0

    @property
    def delivery_ratio(self) -> float:
        return self.delivered / self.expected_deliveries if self.expected_deliveries else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delivery_ratio"] = self.delivery_ratio
        return d


def _percentile(xs: list[float], q: float) -> float:
    if not xs:
        return 0.0
    xs = sorted(xs)
    k = min(len(xs) - 1, max(0, round(q * (len(xs) - 1))))
    return xs[k]


def replay_workload(chat: list[ChatLine], cfg: Config, read_interval: float = 1.0,
                    write_interval: float | None = None, warmup: float = 1.0, time_scale: float = 1.0,
                    drain_limit: float | None = None, get_updates_every: int | None = None,
                    rotate_on_seal: bool = True, seed: int = 0) -> ReplayReport:
    """Replay ``chat`` through simulated clients and a simulated 3-server cluster.

    Args:
        chat: parsed log lines.
        cfg: base deployment config; ``w``, ``r`` and notification sizing are
            derived from the intervals and client count.
        read_interval: seconds between read ticks per client.
        write_interval: seconds between write ticks (defaults to ``read_interval``).
        warmup: simulated seconds before the first message.
        time_scale: multiplier applied to gaps between log timestamps.
        drain_limit: extra simulated seconds allowed after the last message
            (defaults to the message TTL).
        get_updates_every: reads between GetUpdates polls (defaults to the config's).
        rotate_on_seal: publish interest deltas at each sealed epoch rather
            than once per ``m`` writes, so a notification never precedes
            readable data.
        seed: pins all randomness.
    """
    write_interval = write_interval or read_interval
    if not chat:
        return ReplayReport(read_interval=read_interval, write_interval=write_interval)
    users = sorted({c.sender for c in chat})
    idx = {u: i for i, u in enumerate(users)}
    members: dict[str, set[str]] = {}
    for c in chat:
        members.setdefault(c.channel, set()).add(c.sender)
    m = len(users)
    # One delta per write interval (m writes), or per seal when seal-aligned.
    per_delta = max(1, math.ceil(m * cfg.seal_interval / write_interval)) if rotate_on_seal else m
    cfg = cfg.replace(w=1 / write_interval, r=1 / read_interval, rotate_every=m, rotate_on_seal=rotate_on_seal,
                      bloom_window_entries=per_delta * cfg.window,
                      get_updates_every=get_updates_every or cfg.get_updates_every)
    sched = SchedulerConfig(write_interval, read_interval, cfg.get_updates_every)
    sim = Simulation(cfg, m, sched, seed=seed)
    cfg = sim.cfg

    handles = {}
    for ch, mem in members.items():
        for u in sorted(mem):
            h = sim.clients[idx[u]].create_log()
            handles[(ch, u)] = h
            for v in sorted(mem - {u}):
                sim.clients[idx[v]].subscribe(h)

    entry: dict[tuple[bytes, int], tuple[float, int]] = {}
    expected = 0
    t0 = chat[0].ts
    for c in chat:
        t = warmup + (c.ts - t0).total_seconds() * time_scale
        h = handles[(c.channel, c.sender)]
        fanout = len(members[c.channel]) - 1
        expected += fanout
        sender = sim.clients[idx[c.sender]]
        payload = c.text.encode()

        def publish(sender=sender, h=h, payload=payload, fanout=fanout):
            first = sender.publish(h, payload)
            cap = cfg.payload_capacity
            last = first + max(1, -(-len(payload) // cap)) - 1
            entry[(h.id, last)] = (sim.clock.now, fanout)

        sim.at(t, publish)

    last_t = warmup + (chat[-1].ts - t0).total_seconds() * time_scale
    params = paramtool.DeploymentParams.from_config(cfg, m)
    ttl = paramtool.ttl(params)
    limit = last_t + (drain_limit if drain_limit is not None else ttl)
    wall = time.perf_counter()
    sim.run_until(limit, stop=lambda: sim.clock.now > last_t and len(sim.delivery_log) >= expected)
    wall = time.perf_counter() - wall

    latencies = []
    for t, _, log_id, seqno, _msg in sim.delivery_log:
        start = entry.get((log_id, seqno))
        if start is not None:
            latencies.append(t - start[0])
    duration = sim.clock.now
    total = sim.meter.total
    leader = sim.cluster.leader
    # Updates replies vary with window contents; the closed form takes their observed mean.
    updates_reply = sim.meter.mean_frame(Kind.UPDATES_REPLY)
    closed = paramtool.daily_client_bytes(params, read_interval, write_interval, updates_reply,
                                          cfg.get_updates_every)
    return ReplayReport(
        messages=len(chat),
        expected_deliveries=expected,
        delivered=len(latencies),
        latency_mean=statistics.fmean(latencies) if latencies else 0.0,
        latency_p50=_percentile(latencies, 0.5),
        latency_p95=_percentile(latencies, 0.95),
        latency_p99=_percentile(latencies, 0.99),
        latency_max=max(latencies, default=0.0),
        ttl=ttl,
        bytes_per_client_day=total / m / duration * 86400 if duration else 0.0,
        closed_form_bytes_per_client_day=closed,
        server_reads_per_sec=leader.stats.reads / duration if duration else 0.0,
        wall_reads_per_sec=leader.stats.reads / wall if wall else 0.0,
        sim_seconds=duration,
        clients=m,
        read_interval=read_interval,
        write_interval=write_interval,
    )
