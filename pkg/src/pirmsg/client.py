"""Client runtime: publish/subscribe interface over a constant-rate scheduler.

Every write tick emits exactly one write request (queued real write or a
dummy) and every read tick exactly one PIR read (prioritised real read or a
dummy), so the network trace does not depend on application activity.
"""

from __future__ import annotations

import logging
import os
import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from . import crypto, logproto, notify, pir
from .config import Config
from .errors import NotFound
from .logproto import Attempt, LogHandle, ReadPlan, WriteRequest
from .transport import NO_EPOCH, ReadRequest, Status, bloom_params

log = logging.getLogger(__name__)


@dataclass
class Subscription:
    handle: LogHandle
    next_seqno: int = 0
    pending_second_attempt: int | None = None
    # Every write of the cursor's seqno lies in a delta newer than this epoch; None if unknown.
    covered_epoch: int | None = None
    _chunks: list[bytes] = field(default_factory=list, repr=False)
    # Interest epoch seen at the cursor's first attempt, and (seqno, epoch) of its last double miss.
    _first_try: tuple[int, int | None] | None = None
    _miss: tuple[int, int | None] | None = None
    _second_deferred: bool = False


@dataclass(frozen=True)
class SchedulerConfig:
    write_interval: float = 1.0
    read_interval: float = 1.0
    get_updates_every: int = 20
    jitter: float = 0.0
    burst_on_connect: int = 0


@dataclass
class _Pending:
    handle: LogHandle
    seqno: int
    chunk: bytes
    more: bool
    enqueued_at: float | None


@dataclass(frozen=True)
class Delivery:
    log_id: bytes
    seqno: int
    message: bytes


class Scheduler:
    """Fixed-phase tick clock; jitter comes from a seeded stream independent of activity."""

    def __init__(self, sched: SchedulerConfig, rng: crypto.Drbg, start: float = 0.0):
        self.sched = sched
        self._rng = rng
        self.write_phase = start + self._unit() * sched.write_interval
        self.read_phase = start + self._unit() * sched.read_interval

    def _unit(self) -> float:
        return self._rng.randbelow(1 << 30) / float(1 << 30)

    def _jitter(self) -> float:
        j = self.sched.jitter
        return (self._unit() * 2 - 1) * j if j else 0.0

    def write_time(self, k: int) -> float:
        return self.write_phase + k * self.sched.write_interval + self._jitter()

    def read_time(self, k: int) -> float:
        return self.read_phase + k * self.sched.read_interval + self._jitter()


class Client:
    """One user's client library.

    Args:
        cfg: deployment parameters.
        link: connection to the leader (:mod:`pirmsg.links`).
        sched: tick intervals.
        seed: pins every random choice (handles, dummies, PIR shares, masks)
            when given; OS entropy otherwise.
        on_deliver: callback ``(log_id, seqno, message)`` run on the tick thread.
        sign_publics: server signing keys used to verify interest updates.
        clock: time source used to stamp queued writes.
    """

    def __init__(self, cfg: Config, link, sched: SchedulerConfig | None = None, seed=None,
                 on_deliver: Callable[[bytes, int, bytes], None] | None = None,
                 sign_publics: list[bytes] | None = None, clock=time.monotonic,
                 retransmit_requests: bool = False):
        self.cfg = cfg
        self.link = link
        self.sched = sched or SchedulerConfig(1 / cfg.w, 1 / cfg.r, cfg.get_updates_every)
        if seed is None:
            self.randbytes, self.randbelow = os.urandom, secrets.randbelow
            self._rng = crypto.Drbg(os.urandom(32))
        else:
            self._rng = crypto.Drbg(seed)
            self.randbytes, self.randbelow = self._rng.randbytes, self._rng.randbelow
        self.box_publics = [s.public_key for s in cfg.servers]
        self.sign_publics = sign_publics or [s.sign_key for s in cfg.servers]
        self.bloom = bloom_params(cfg)
        self.view = notify.GlobalInterestVector(self.bloom, cfg.window)
        self.on_deliver = on_deliver
        self.clock = clock
        self.retransmit_requests = retransmit_requests
        # None entries are queued dummy operations.
        self.write_queue: deque[_Pending | None] = deque()
        self.read_queue: deque[tuple[LogHandle, int] | None] = deque()
        self._explicit_second: deque[tuple[LogHandle, int]] = deque()
        self.subscriptions: dict[bytes, Subscription] = {}
        self._order: list[bytes] = []
        self._rr = 0
        self._next_write_seq: dict[bytes, int] = {}
        self._inflight: ReadPlan | None = None
        self.read_count = 0
        self._polled_at = -1
        self._polling = False
        self.write_count = 0
        self.delivered: list[Delivery] = []
        self.enqueue_times: dict[tuple[bytes, int], float] = {}
        self.control_outbox: list[logproto.ControlMessage] = []
        self._lock = threading.Lock()

    # -- developer interface ------------------------------------------------

    def create_log(self, start_seqno: int = 0) -> LogHandle:
        h = logproto.gen_handle(self.randbytes)
        self._next_write_seq[h.id] = start_seqno
        return h

    def publish(self, h: LogHandle, message: bytes) -> int:
        """Queue ``message``; returns the first sequence number it will occupy."""
        cap = self.cfg.payload_capacity
        chunks = [message[i:i + cap] for i in range(0, len(message), cap)] or [b""]
        now = self.clock()
        with self._lock:
            first = self._next_write_seq.get(h.id, 0)
            for i, chunk in enumerate(chunks):
                self.write_queue.append(_Pending(h, first + i, chunk, i < len(chunks) - 1, now))
            self._next_write_seq[h.id] = first + len(chunks)
        return first

    def subscribe(self, h: LogHandle, start_seqno: int = 0) -> Subscription:
        with self._lock:
            sub = self.subscriptions.get(h.id)
            if sub is not None:
                return sub
            sub = Subscription(h, start_seqno)
            self.subscriptions[h.id] = sub
            # Fixed per-session permutation: new logs land at a random position.
            self._order.insert(self.randbelow(len(self._order) + 1), h.id)
            return sub

    def unsubscribe(self, h: LogHandle):
        with self._lock:
            if self.subscriptions.pop(h.id, None) is not None:
                self._order.remove(h.id)

    @staticmethod
    def export_handle(h: LogHandle) -> str:
        return h.to_json()

    @staticmethod
    def import_handle(text: str) -> LogHandle:
        return LogHandle.from_json(text)

    def enqueue_write(self, h: LogHandle, seqno: int, message: bytes):
        """Queue a single record at an explicit sequence number."""
        if len(message) > self.cfg.payload_capacity:
            raise ValueError("explicit writes must fit one record")
        with self._lock:
            self.write_queue.append(_Pending(h, seqno, message, False, self.clock()))

    def enqueue_read(self, h: LogHandle, seqno: int):
        """Queue a one-off read of ``(h, seqno)`` ahead of subscription polling."""
        with self._lock:
            self.read_queue.append((h, seqno))

    def enqueue_fake_read(self):
        with self._lock:
            self.read_queue.append(None)

    def enqueue_fake_write(self):
        with self._lock:
            self.write_queue.append(None)

    def send_control(self, control_log: LogHandle, msg: logproto.ControlMessage) -> int:
        return self.publish(control_log, logproto.encode_control(msg))

    # -- scheduled traffic --------------------------------------------------

    def connect_burst(self):
        for _ in range(self.sched.burst_on_connect):
            self.write_tick()

    def write_tick(self) -> WriteRequest:
        with self._lock:
            item = self.write_queue.popleft() if self.write_queue else None
        if item is not None:
            iv = notify.make_interest(item.handle.id, item.seqno, self.bloom)
            w = logproto.real_write(item.handle, item.seqno, item.chunk, self.cfg.b, self.cfg.z,
                                    iv.positions, more=item.more)
        else:
            iv = notify.make_fake_interest(self.bloom, self.randbytes)
            w = logproto.fake_write(self.cfg.b, self.cfg.z, iv.positions, self.randbelow, self.randbytes)
        status = self.link.write(w)
        self.write_count += 1
        if item is not None:
            if status == Status.RATE_LIMITED:
                with self._lock:
                    self.write_queue.appendleft(item)
            else:
                self.enqueue_times[(item.handle.id, item.seqno)] = item.enqueued_at
        return w

    def _select(self) -> ReadPlan:
        b = self.cfg.b
        with self._lock:
            order = [self.subscriptions[i] for i in self._order]
            # A stale poll's second attempt yields to fresh notifications.
            self._polling = False
            for sub in order:
                if sub.pending_second_attempt is not None and not sub._second_deferred:
                    return logproto.read_plan(sub.handle, sub.pending_second_attempt, Attempt.SECOND, b)
            if self._explicit_second:
                h, seqno = self._explicit_second.popleft()
                return logproto.read_plan(h, seqno, Attempt.SECOND, b)
            if self.read_queue:
                head = self.read_queue.popleft()
                if head is None:
                    return logproto.fake_read_plan(b, self.randbelow)
                return logproto.read_plan(head[0], head[1], Attempt.FIRST, b)
            if self.view.deltas:
                for sub in order:
                    # After a double miss only deltas newer than that read count.
                    since = sub._miss[1] if sub._miss and sub._miss[0] == sub.next_seqno else None
                    if self.view.check(sub.handle.id, sub.next_seqno, since_epoch=since):
                        if sub.pending_second_attempt is not None:
                            return logproto.read_plan(sub.handle, sub.pending_second_attempt, Attempt.SECOND, b)
                        return logproto.read_plan(sub.handle, sub.next_seqno, Attempt.FIRST, b)
            for sub in order:
                if sub.pending_second_attempt is not None:
                    return logproto.read_plan(sub.handle, sub.pending_second_attempt, Attempt.SECOND, b)
            for _ in range(len(order)):
                sub = order[self._rr % len(order)]
                self._rr += 1
                if not self._covered(sub):
                    self._polling = True
                    return logproto.read_plan(sub.handle, sub.next_seqno, Attempt.FIRST, b)
        return logproto.fake_read_plan(b, self.randbelow)

    def build_read(self, target: int) -> tuple[ReadRequest, list[bytes]]:
        """Serialized PIR request for ``target`` plus the mask seeds needed to unmask."""
        cfg = self.cfg
        queries = pir.gen_queries(target, cfg.b, cfg.l, self.randbytes)
        seeds = [self.randbytes(crypto.SEED_BYTES) for _ in range(cfg.l)]
        plains = [pir.encode_query(q) + p for q, p in zip(queries, seeds)]
        eph, blobs = crypto.pk_seal_many(self.box_publics, plains, self.randbytes(32))
        return ReadRequest(NO_EPOCH, eph, tuple(blobs)), seeds

    def read_tick(self) -> ReadPlan:
        # Polls happen on a fixed tick count and before selection, so fresh
        # notifications steer this very read.
        every = self.sched.get_updates_every
        if every and (self.read_count + 1) % every == 0:
            self.get_updates()
        plan = self._select()
        req, seeds = self.build_read(plan.target_bucket)
        combined = self.link.read(req)
        self._inflight = plan
        self.on_read_response(pir.unmask(combined, seeds))
        self.read_count += 1
        return plan

    def _covered(self, sub: Subscription) -> bool:
        """True if any write of the cursor's seqno would fall inside a window fetched this tick.

        Bloom checks have no false negatives, so a stale poll of such a
        subscription cannot find anything the notification step would miss.
        An older view says nothing about writes since it was fetched.
        """
        return (self._polled_at == self.read_count and sub.covered_epoch is not None
                and bool(self.view.deltas) and self.view.window_epoch <= sub.covered_epoch + 1)

    def get_updates(self) -> bool:
        """Fetch interest deltas; adopt them only if every server signature verifies."""
        rep = self.link.get_updates(self.view.latest_epoch())
        if not rep.deltas and rep.window_epoch == self.view.window_epoch:
            self._polled_at = self.read_count
            return True
        trial = self.view.copy()
        trial.apply_update(rep.window_epoch, list(rep.deltas))
        ok = notify.giv_verify(self.sign_publics, trial, list(rep.signatures))
        if ok:
            self.view = trial
            self._polled_at = self.read_count
        else:
            log.debug("interest update rejected (window %d)", rep.window_epoch)
        return ok

    def on_read_response(self, bucket: bytes) -> bytes | None:
        """Process one unmasked bucket for the in-flight plan; returns a completed message."""
        plan, self._inflight = self._inflight, None
        if plan is None or plan.is_fake:
            return None
        h, seqno = plan.expected
        with self._lock:
            sub = self.subscriptions.get(h.id)
            if sub is None:
                return self._explicit_response(plan, bucket)
            if seqno != sub.next_seqno:
                return None
            try:
                rec = logproto.find_record(h, seqno, bucket, self.cfg.d, self.cfg.slot_size)
            except NotFound:
                if plan.attempt == Attempt.FIRST:
                    sub.pending_second_attempt = seqno
                    sub._second_deferred = self._polling
                    sub._first_try = (seqno, self.view.latest_epoch())
                else:
                    sub.pending_second_attempt = None
                    first = sub._first_try[1] if sub._first_try and sub._first_try[0] == seqno else None
                    sub._miss = (seqno, first)
                    # Evictions can move an item between the two attempts, so a double
                    # miss proves nothing; stale polls resume until the next delivery.
                    sub.covered_epoch = None
                    if self.retransmit_requests:
                        self.control_outbox.append(logproto.ControlMessage(
                            logproto.ControlKind.RETRANSMIT_REQUEST, h.id, seqno))
                return None
            sub.next_seqno += 1
            sub.pending_second_attempt = None
            # The next seqno is written no earlier than this one was announced.
            first = self.view.first_epoch(h.id, seqno)
            sub.covered_epoch = None if first is None else first - 1
            sub._chunks.append(rec.payload)
            if rec.more:
                return None
            message = b"".join(sub._chunks)
            sub._chunks.clear()
        self.delivered.append(Delivery(h.id, seqno, message))
        if self.on_deliver:
            self.on_deliver(h.id, seqno, message)
        return message

    def _explicit_response(self, plan: ReadPlan, bucket: bytes) -> bytes | None:
        h, seqno = plan.expected
        try:
            rec = logproto.find_record(h, seqno, bucket, self.cfg.d, self.cfg.slot_size)
        except NotFound:
            if plan.attempt == Attempt.FIRST:
                self._explicit_second.append((h, seqno))
            return None
        self.delivered.append(Delivery(h.id, seqno, rec.payload))
        if self.on_deliver:
            self.on_deliver(h.id, seqno, rec.payload)
        return rec.payload

    def run(self, stop: threading.Event, start: float | None = None):
        """Drive both tick streams in real time until ``stop`` is set."""
        sched = Scheduler(self.sched, self._rng.fork(b"sched"), start if start is not None else self.clock())
        kw = kr = 0
        next_w, next_r = sched.write_time(0), sched.read_time(0)
        self.connect_burst()
        while not stop.is_set():
            t = min(next_w, next_r)
            delay = t - self.clock()
            if delay > 0 and stop.wait(delay):
                break
            if next_w <= next_r:
                self.write_tick()
                kw += 1
                next_w = sched.write_time(kw)
            else:
                self.read_tick()
                kr += 1
                next_r = sched.read_time(kr)
