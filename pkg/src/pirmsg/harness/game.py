"""Access-sequence game runner and trace comparator.

A :class:`GameScript` lists rounds of three kinds: create a log, make some
clients fetch interest updates, or extend every client's operation sequence
with a pair ``(op0, op1)``. :func:`run_game` executes ``op_b`` for each client
through the real client scheduler and an in-process cluster, recording every
frame at the link boundary. :func:`compare_traces` then checks whether two
runs are distinguishable by frame timing and size and runs randomness tests
on the opaque payload fields.

Script JSON::

    {"m": 2, "rounds": [
        {"create_log": {"writer": 0, "readers": [1]}},
        {"extend": [[{"op": "real_write", "log": 0, "seqno": 0, "msg": "hi"}, {"op": "fake_write"}],
                    [{"op": "fake_read"}, {"op": "fake_read"}]]},
        {"get_updates": [0, 1]}
    ]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .. import crypto
from ..client import Client, SchedulerConfig
from ..config import Config, ServerKeys
from ..errors import PirMsgError
from ..links import LocalLink
from ..server import Cluster
from ..stats import monobit_pvalue
from ..transport import Frame, Kind
from .sim import SimClock

OPS = ("real_write", "real_read", "fake_write", "fake_read")
UPDATE_KINDS = (Kind.GET_UPDATES.name, Kind.UPDATES_REPLY.name)


class GameError(PirMsgError):
    """Malformed script or reference to an unknown log index."""


@dataclass(frozen=True)
class GameScript:
    m: int
    rounds: list[dict]
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise GameError("need at least one honest client")
        for i, r in enumerate(self.rounds):
            if len(r) != 1 or next(iter(r)) not in ("create_log", "get_updates", "extend"):
                raise GameError(f"round {i}: expected one of create_log, get_updates, extend")
            if "extend" in r:
                pairs = r["extend"]
                if len(pairs) != self.m:
                    raise GameError(f"round {i}: extend needs one op pair per client")
                for pair in pairs:
                    if len(pair) != 2 or any(op.get("op") not in OPS for op in pair):
                        raise GameError(f"round {i}: bad op pair {pair!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "GameScript":
        return cls(int(d["m"]), list(d["rounds"]), int(d.get("seed", 0)))

    @classmethod
    def load(cls, path: str | Path) -> "GameScript":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"m": self.m, "seed": self.seed, "rounds": self.rounds}

    def branch_ops(self, bit: int) -> list[list[dict]]:
        return [[pair[bit] for pair in r["extend"]] for r in self.rounds if "extend" in r]


@dataclass
class TraceRecord:
    """One frame seen at a client's link.

    ``kind`` is the frame type name, so direction is implied (requests and
    replies have distinct kinds). ``fields`` holds hex of the opaque payload
    parts used for randomness tests.
    """

    client: int
    slot: int
    kind: str
    length: int
    digest: str
    fields: dict[str, str] = field(default_factory=dict)

    def shape(self) -> tuple[int, str, int]:
        return (self.slot, self.kind, self.length)


@dataclass
class GameResult:
    bit: int
    traces: list[TraceRecord]
    refused: list[int] = field(default_factory=list)
    delivered: list[tuple[int, int, int, bytes]] = field(default_factory=list)

    def per_client(self) -> dict[int, list[TraceRecord]]:
        out: dict[int, list[TraceRecord]] = {}
        for t in self.traces:
            out.setdefault(t.client, []).append(t)
        return out

    def dump(self, path: str | Path):
        with open(path, "w") as f:
            for t in self.traces:
                f.write(json.dumps(asdict(t)) + "\n")


def load_traces(path: str | Path) -> list[TraceRecord]:
    with open(path) as f:
        return [TraceRecord(**json.loads(line)) for line in f if line.strip()]


def _fields(frame: Frame, cfg: Config) -> dict[str, str]:
    p = frame.payload
    if frame.kind == Kind.WRITE:
        return {"write_data": p[8:8 + cfg.slot_size].hex()}
    if frame.kind == Kind.READ:
        # X25519 public keys always have a clear top bit, so the key is kept
        # apart from the ciphertext that monobit tests expect to be uniform.
        key_end = 8 + crypto.PK_BYTES
        return {"read_key": p[8:key_end].hex(), "read_blobs": p[key_end:].hex()}
    if frame.kind == Kind.READ_REPLY:
        return {"read_reply": p[4:].hex()}
    return {}


def game_config(m: int, n: int = 1024, z: int = 128) -> Config:
    """Small deployment for game runs: one write and one read per round."""
    return Config(n=n, z=z, w=1.0, r=1.0, rotate_every=max(1, m), bloom_window_entries=max(1, m) * 100,
                  seal_every=10**9, seal_interval=10**9)


def run_game(script: GameScript, bit: int, cfg: Config | None = None, seed: int | None = None) -> GameResult:
    """Play ``script`` with challenge bit ``bit``; all randomness derives from ``seed``.

    Rounds run in lockstep: an extend round hands each client its op, then
    every client takes one write tick, the leader seals, and every client
    takes one read tick. The slot of a record is the round index.

    Args:
        script: the adversary's rounds.
        bit: challenge bit selecting ``op0`` or ``op1``.
        cfg: deployment config; :func:`game_config` if omitted.
        seed: overrides ``script.seed``.
    """
    if bit not in (0, 1):
        raise GameError("bit must be 0 or 1")
    seed = script.seed if seed is None else seed
    m = script.m
    cfg = cfg or game_config(m)
    root = crypto.Drbg(b"game" + seed.to_bytes(8, "big"))
    keys = [ServerKeys.from_seed(root.randbytes(32)) for _ in range(cfg.l)]
    clock = SimClock()
    cluster = Cluster(cfg.replace(servers=()), keys, clock=clock, enforce_rate=False)
    cfg = cluster.cfg
    result = GameResult(bit, [])
    slot = 0

    def tap_for(idx):
        def tap(direction, frame):
            wire = frame.encode()
            result.traces.append(TraceRecord(idx, slot, frame.kind.name, len(wire),
                                             hashlib.blake2b(wire, digest_size=16).hexdigest(),
                                             _fields(frame, cfg)))
        return tap

    sched = SchedulerConfig(1.0, 1.0, get_updates_every=0)
    clients = []
    for i in range(m):
        def deliver(log_id, seqno, msg, i=i):
            result.delivered.append((slot, i, seqno, msg))
        link = LocalLink(cfg, cluster.leader, i.to_bytes(8, "big"), tap_for(i))
        clients.append(Client(cfg, link, sched, seed=root.randbytes(32), clock=clock, on_deliver=deliver))

    table: list = []  # T: handles indexed by creation order
    for slot, rnd in enumerate(script.rounds):
        clock.now = float(slot)
        if "create_log" in rnd:
            entry = rnd["create_log"]
            who = [entry["writer"], *entry.get("readers", [])]
            if not all(isinstance(x, int) and 0 <= x < m for x in who):
                result.refused.append(slot)
                continue
            table.append(clients[entry["writer"]].create_log())
        elif "get_updates" in rnd:
            for i in sorted(set(rnd["get_updates"])):
                if not 0 <= i < m:
                    raise GameError(f"round {slot}: unknown client {i}")
                clients[i].get_updates()
        else:
            for i, pair in enumerate(rnd["extend"]):
                _enqueue(clients[i], pair[bit], table, cfg)
            for c in clients:
                c.write_tick()
            cluster.leader.seal_epoch()
            for c in clients:
                c.read_tick()
    return result


def _enqueue(c: Client, op: dict, table: list, cfg: Config):
    kind = op["op"]
    if kind == "fake_write":
        c.enqueue_fake_write()
    elif kind == "fake_read":
        c.enqueue_fake_read()
    else:
        ind = op.get("log")
        if not isinstance(ind, int) or not 0 <= ind < len(table):
            raise GameError(f"unknown log index {ind!r}")
        h = table[ind]
        if kind == "real_write":
            msg = op.get("msg", "")
            data = bytes.fromhex(msg[4:]) if msg.startswith("hex:") else msg.encode()
            c.enqueue_write(h, int(op["seqno"]), data[:cfg.payload_capacity])
        else:
            c.enqueue_read(h, int(op["seqno"]))


# -- comparison ----------------------------------------------------------------

@dataclass
class Verdict:
    shape_equal: bool
    mismatch: dict | None
    field_stats: dict[str, dict[str, float]]
    updates_flagged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _by_client(traces: list[TraceRecord]) -> dict[int, list[TraceRecord]]:
    out: dict[int, list[TraceRecord]] = {}
    for t in traces:
        out.setdefault(t.client, []).append(t)
    for v in out.values():
        v.sort(key=lambda t: t.slot)  # stable: keeps in-slot order
    return out


def _updates_schedule(recs: list[TraceRecord]) -> list[tuple[int, str]]:
    return [(t.slot, t.kind) for t in recs if t.kind in UPDATE_KINDS]


def field_bytes(traces: list[TraceRecord]) -> dict[str, bytes]:
    out: dict[str, bytearray] = {}
    for t in traces:
        for name, hx in t.fields.items():
            out.setdefault(name, bytearray()).extend(bytes.fromhex(hx))
    return {k: bytes(v) for k, v in out.items()}


def field_statistics(t0: list[TraceRecord], t1: list[TraceRecord]) -> dict[str, dict[str, float]]:
    """Monobit p-value per branch and a two-sample chi-square on byte histograms."""
    f0, f1 = field_bytes(t0), field_bytes(t1)
    out = {}
    for name in sorted(set(f0) | set(f1)):
        a, b = f0.get(name, b""), f1.get(name, b"")
        entry = {"bytes0": float(len(a)), "bytes1": float(len(b))}
        if a:
            entry["monobit_p0"] = monobit_pvalue(a)
        if b:
            entry["monobit_p1"] = monobit_pvalue(b)
        if a and b:
            h0 = np.bincount(np.frombuffer(a, np.uint8), minlength=256)
            h1 = np.bincount(np.frombuffer(b, np.uint8), minlength=256)
            keep = (h0 + h1) > 0
            entry["chi2_p"] = float(sps.chi2_contingency(np.vstack([h0[keep], h1[keep]]))[1])
        out[name] = entry
    return out


def compare_traces(t0: list[TraceRecord], t1: list[TraceRecord]) -> Verdict:
    """Shape comparison of two runs plus payload statistics.

    Shapes are per-client ``(slot, kind, length)`` sequences. Interest
    updates are not hidden, so their replies vary in length with global
    activity: when both runs poll on the same schedule those records are
    compared on ``(slot, kind)`` only; when the schedules differ the verdict
    is flagged and updates are left out of the comparison.
    """
    c0, c1 = _by_client(t0), _by_client(t1)
    flagged = any(_updates_schedule(c0.get(c, [])) != _updates_schedule(c1.get(c, []))
                  for c in set(c0) | set(c1))
    mismatch = None
    for c in sorted(set(c0) | set(c1)):
        r0, r1 = c0.get(c, []), c1.get(c, [])
        if flagged:
            r0 = [t for t in r0 if t.kind not in UPDATE_KINDS]
            r1 = [t for t in r1 if t.kind not in UPDATE_KINDS]
        for i in range(max(len(r0), len(r1))):
            if i >= len(r0) or i >= len(r1):
                extra = r1[i] if i >= len(r0) else r0[i]
                mismatch = {"client": c, "index": i, "slot": extra.slot,
                            "reason": f"extra {extra.kind} frame in trace {0 if i < len(r0) else 1}"}
                break
            a, b = r0[i], r1[i]
            sa, sb = a.shape(), b.shape()
            if a.kind == Kind.UPDATES_REPLY.name and b.kind == a.kind:
                sa, sb = sa[:2], sb[:2]
            if sa != sb:
                mismatch = {"client": c, "index": i, "slot": a.slot,
                            "reason": f"{sa} != {sb}"}
                break
        if mismatch:
            break
    return Verdict(mismatch is None, mismatch, field_statistics(t0, t1), flagged)


# -- script generators ------------------------------------------------------------

def real_vs_fake_script(m: int, rounds: int, seed: int = 0, updates_every: int = 20) -> GameScript:
    """Branch 0 chats in a ring (client i writes log i, reads log i-1); branch 1 only fakes.

    Even extend rounds write, odd rounds read back the previous round's record.
    Both branches poll interest updates on the same schedule.
    """
    rng = crypto.Drbg(b"script" + seed.to_bytes(8, "big"))
    out: list[dict] = [{"create_log": {"writer": i, "readers": [(i + 1) % m]}} for i in range(m)]
    for k in range(rounds):
        seq = k // 2
        pairs = []
        for i in range(m):
            if k % 2 == 0:
                msg = "hex:" + rng.randbytes(1 + rng.randbelow(32)).hex()
                pairs.append([{"op": "real_write", "log": i, "seqno": seq, "msg": msg}, {"op": "fake_write"}])
            else:
                pairs.append([{"op": "real_read", "log": (i - 1) % m, "seqno": seq}, {"op": "fake_read"}])
        out.append({"extend": pairs})
        if updates_every and (k + 1) % updates_every == 0:
            out.append({"get_updates": list(range(m))})
    return GameScript(m, out, seed)


def format_verdict(v: Verdict) -> str:
    lines = [f"shape_equal: {v.shape_equal}"]
    if v.mismatch:
        lines.append(f"first mismatch: client {v.mismatch['client']} slot {v.mismatch['slot']}: "
                     f"{v.mismatch['reason']}")
    if v.updates_flagged:
        lines.append("interest-update schedules differ: flagged, not judged")
    for name, st in v.field_stats.items():
        cells = "  ".join(f"{k}={st[k]:.4g}" for k in ("monobit_p0", "monobit_p1", "chi2_p") if k in st)
        lines.append(f"{name:<12} {cells}")
    return "\n".join(lines)


__all__ = ["GameScript", "GameError", "TraceRecord", "GameResult", "Verdict", "run_game",
           "compare_traces", "field_statistics", "real_vs_fake_script", "game_config", "load_traces",
           "format_verdict"]
