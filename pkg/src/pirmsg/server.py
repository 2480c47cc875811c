"""Replicated server state: sequenced write application, epochs, PIR answering.

One :class:`Replica` per server holds the cuckoo table, the global interest
vector and recent sealed snapshots. The :class:`Leader` wraps the leader's
replica, assigns global sequence numbers, fans sequenced operations out to
follower handles and combines their masked read answers.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

from . import crypto, pir
from .config import Config, ServerKeys
from .cuckoo import Item, Table
from .errors import AuthFailure, EpochUnavailable, Malformed, RateLimited
from .logproto import WriteRequest
from .notify import GlobalInterestVector, giv_sign
from .transport import NO_EPOCH, ReadRequest, SeqOp, UpdatesReply, bloom_params

log = logging.getLogger(__name__)


class OutOfOrder(RuntimeError):
    pass


class Replica:
    """State machine of one server; all mutation goes through :meth:`apply`."""

    def __init__(self, cfg: Config, index: int, keys: ServerKeys):
        self.cfg = cfg
        self.index = index
        self.keys = keys
        self.table = Table(cfg.b, cfg.d, cfg.n, cfg.s_cuckoo, cfg.slot_size)
        self.giv = GlobalInterestVector(bloom_params(cfg), cfg.window)
        self.applied_seq = 0
        self.snapshots: OrderedDict[int, pir.Snapshot] = OrderedDict()
        self.epoch_digests: OrderedDict[int, bytes] = OrderedDict()
        self.decrypt_failures = 0
        self.record_digests = True
        self._since_rotate = 0
        self.seal()

    def validate(self, w: WriteRequest):
        m_bits, h = self.giv.params.m_bits, self.giv.params.h
        if not (0 <= w.beta1 < self.cfg.b and 0 <= w.beta2 < self.cfg.b):
            raise Malformed("bucket index out of range")
        if len(w.data) != self.cfg.slot_size:
            raise Malformed("data length")
        if len(w.interest) > h or any(not 0 <= p < m_bits for p in w.interest):
            raise Malformed("interest vector")

    def apply(self, global_seq: int, op: SeqOp, write: WriteRequest | None = None) -> bytes:
        """Apply one sequenced operation; returns a window signature if one was produced."""
        if global_seq != self.applied_seq + 1:
            raise OutOfOrder(f"expected seq {self.applied_seq + 1}, got {global_seq}")
        sig = b""
        if op == SeqOp.WRITE:
            self.validate(write)
            self.table.insert(Item(write.beta1, write.beta2, write.data))
            self.giv.absorb(write.interest)
            self._since_rotate += 1
            if not self.cfg.rotate_on_seal and self._since_rotate >= self.cfg.rotate_every:
                sig = self._rotate()
        elif op == SeqOp.SEAL:
            self.seal()
            # Publishing at the seal means a notification never precedes readable data.
            if self.cfg.rotate_on_seal and self._since_rotate:
                sig = self._rotate()
        self.applied_seq = global_seq
        return sig

    def _rotate(self) -> bytes:
        self._since_rotate = 0
        self.giv.rotate()
        sig = giv_sign(self.keys.signing, self.giv)
        self.giv.signatures[self.index] = sig
        return sig

    def seal(self) -> pir.Snapshot:
        epoch = self.table.writes
        snap = self.snapshots.get(epoch)
        if snap is None:
            snap = self.table.snapshot()
            self.snapshots[epoch] = snap
            if self.record_digests:
                self.epoch_digests[epoch] = self.state_digest(snap)
            while len(self.snapshots) > self.cfg.keep_epochs:
                self.snapshots.popitem(last=False)
        return snap

    def state_digest(self, snap: pir.Snapshot | None = None) -> bytes:
        snap = snap or self.table.snapshot()
        return snap.digest() + self.giv.state_digest()

    @property
    def latest_epoch(self) -> int:
        return next(reversed(self.snapshots))

    def snapshot_at(self, epoch: int) -> pir.Snapshot:
        if epoch == NO_EPOCH:
            epoch = self.latest_epoch
        try:
            return self.snapshots[epoch]
        except KeyError:
            raise EpochUnavailable(epoch) from None

    def answer_read(self, req: ReadRequest, epoch: int) -> bytes:
        """Open this server's blob, answer at ``epoch`` and mask with the client's seed.

        A blob that fails to open yields a random block of the right size, so
        a failure is indistinguishable to whoever relays the answer.
        """
        snap = self.snapshot_at(epoch)
        try:
            plain = crypto.pk_open_many(self.keys.box, req.eph_public, self.index, req.blobs[self.index])
        except AuthFailure:
            self.decrypt_failures += 1
            log.warning("server %d: read blob failed to open", self.index)
            return os.urandom(snap.bucket_len)
        qb = self.cfg.query_bytes
        q = pir.decode_query(plain[:qb], self.cfg.b)
        return pir.mask_answer(pir.answer(snap, q), plain[qb:])


class LocalFollower:
    """Follower handle for a replica living in the same process."""

    def __init__(self, replica: Replica):
        self.replica = replica

    def apply(self, global_seq: int, op: SeqOp, write: WriteRequest | None = None) -> bytes:
        return self.replica.apply(global_seq, op, write)

    def answer(self, req: ReadRequest, epoch: int) -> bytes:
        return self.replica.answer_read(req, epoch)


class TokenBucket:
    def __init__(self, rate: float, burst: float):
        self.rate, self.burst = rate, burst
        self.tokens = burst
        self.stamp: float | None = None

    def take(self, now: float) -> bool:
        if self.stamp is not None:
            self.tokens = min(self.burst, self.tokens + (now - self.stamp) * self.rate)
        self.stamp = now
        if self.tokens >= 1:
            self.tokens -= 1
            return True
        return False


@dataclass
class LeaderStats:
    writes: int = 0
    reads: int = 0
    updates: int = 0
    rate_limited: int = 0
    malformed: int = 0


class Leader:
    """Sequencer and read combiner.

    Args:
        replica: the leader's own replica (index 0 by convention).
        followers: handles for replicas 1..l-1, in index order.
        clock: time source in seconds, used for rate limiting and epoch cadence.
        enforce_rate: disable for bulk loading in tests and benchmarks.
    """

    def __init__(self, replica: Replica, followers: list, clock=time.monotonic, enforce_rate: bool = True):
        cfg = replica.cfg
        if len(followers) != cfg.l - 1:
            raise ValueError("need l-1 follower handles")
        self.cfg = cfg
        self.replica = replica
        self.followers = followers
        self.clock = clock
        self.enforce_rate = enforce_rate
        self.global_seq = replica.applied_seq
        self.stats = LeaderStats()
        self._buckets: dict[bytes, TokenBucket] = {}
        self._lock = threading.Lock()
        self._since_seal = 0
        self._last_seal = clock()
        # Only epochs sealed on every replica are offered to readers.
        self.read_epoch = replica.latest_epoch

    def _sequence(self, op: SeqOp, write: WriteRequest | None = None):
        self.global_seq += 1
        self.replica.apply(self.global_seq, op, write)
        for i, f in enumerate(self.followers, start=1):
            sig = f.apply(self.global_seq, op, write)
            if sig:
                self.replica.giv.signatures[i] = sig

    def process_write(self, w: WriteRequest, client_id: bytes) -> None:
        """Rate-check, validate, sequence and replicate one write."""
        now = self.clock()
        with self._lock:
            if self.enforce_rate:
                tb = self._buckets.get(client_id)
                if tb is None:
                    tb = self._buckets[client_id] = TokenBucket(self.cfg.w, max(2.0, 2 * self.cfg.w))
                if not tb.take(now):
                    self.stats.rate_limited += 1
                    raise RateLimited(client_id.hex())
            try:
                self.replica.validate(w)
            except Malformed:
                self.stats.malformed += 1
                raise
            self._sequence(SeqOp.WRITE, w)
            self.stats.writes += 1
            self._since_seal += 1
            if self._since_seal >= self.cfg.seal_every:
                self._seal(now)

    def _seal(self, now: float):
        self._sequence(SeqOp.SEAL)
        self._since_seal = 0
        self._last_seal = now
        self.read_epoch = self.replica.latest_epoch

    def seal_epoch(self) -> int:
        with self._lock:
            self._seal(self.clock())
            return self.replica.latest_epoch

    def tick(self) -> bool:
        """Seal if writes are pending and the cadence interval has passed."""
        now = self.clock()
        with self._lock:
            # The tolerance absorbs float error in tick times that are nominal multiples of the interval.
            if self._since_seal and now - self._last_seal >= self.cfg.seal_interval - 1e-9:
                self._seal(now)
                return True
        return False

    def process_read(self, req: ReadRequest) -> bytes:
        """Combine every server's masked answer at one epoch."""
        epoch = req.epoch
        if epoch == NO_EPOCH:
            epoch = self.read_epoch
        elif epoch not in self.replica.snapshots:
            raise EpochUnavailable(epoch)
        parts = [self.replica.answer_read(req, epoch)]
        parts += [f.answer(req, epoch) for f in self.followers]
        self.stats.reads += 1
        return pir.combine_masked(parts)

    def process_get_updates(self, since_epoch: int | None) -> UpdatesReply:
        g = self.replica.giv
        with self._lock:
            deltas = tuple(g.encoded_deltas(since_epoch))
            sigs = tuple(g.signatures.get(i, bytes(crypto.SIG_BYTES)) for i in range(self.cfg.l))
            window_epoch = g.window_epoch
        self.stats.updates += 1
        return UpdatesReply(window_epoch, deltas, sigs)


class Cluster:
    """All ``l`` replicas in one process, wired through local follower handles."""

    def __init__(self, cfg: Config, keys: list[ServerKeys] | None = None, clock=time.monotonic,
                 enforce_rate: bool = True):
        if keys is None:
            keys = [ServerKeys.from_seed(s.secret_seed) for s in cfg.servers] if cfg.servers else \
                   [ServerKeys.generate() for _ in range(cfg.l)]
        self.keys = keys
        if not cfg.servers:
            from .config import ServerInfo
            cfg = cfg.replace(servers=tuple(ServerInfo(f"local:{i}", k.box.public, k.signing.public)
                                            for i, k in enumerate(keys)))
        self.cfg = cfg
        self.replicas = [Replica(cfg, i, k) for i, k in enumerate(keys)]
        self.leader = Leader(self.replicas[0], [LocalFollower(r) for r in self.replicas[1:]],
                             clock=clock, enforce_rate=enforce_rate)

    @property
    def box_publics(self) -> list[bytes]:
        return [k.box.public for k in self.keys]

    @property
    def sign_publics(self) -> list[bytes]:
        return [k.signing.public for k in self.keys]
