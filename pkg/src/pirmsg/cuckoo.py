"""Blocked cuckoo hash table with FIFO expiry, replicated deterministically.

Every random choice comes from a PRF stream keyed by the shared cuckoo seed,
so replicas that apply the same writes in the same order end up
byte-identical.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .crypto import PrfStream
from .errors import InvalidConfig, InvalidIndex, Malformed
from .pir import Snapshot

log = logging.getLogger(__name__)

MAX_DISPLACEMENTS = 500
RECOMMENDED_LOAD = 0.95


@dataclass(frozen=True)
class Item:
    beta1: int
    beta2: int
    data: bytes


@dataclass
class InsertReport:
    placed_at: tuple[int, int] | None
    evictions: int = 0
    displaced_chain: list[tuple[int, int, int]] = field(default_factory=list)
    expired: int | None = None
    dropped: Item | None = None

    @property
    def overflow(self) -> bool:
        return self.dropped is not None


class Table:
    """``b`` buckets of ``d`` fixed-size slots holding at most ``n`` live items.

    Args:
        b: bucket count.
        d: slots per bucket.
        n: live-item capacity; the oldest item is expired before each insert
            once the table holds ``n`` items.
        s_cuckoo: seed shared by all replicas.
        slot_size: bytes per slot.
    """

    def __init__(self, b: int, d: int, n: int, s_cuckoo: bytes, slot_size: int):
        if b < 1 or d < 1 or n < 1 or slot_size < 1:
            raise InvalidConfig("b, d, n and slot_size must be positive")
        if n > b * d:
            raise InvalidConfig(f"capacity n={n} exceeds b*d={b * d}")
        if n > RECOMMENDED_LOAD * b * d:
            log.warning("load factor %.3f above %.2f", n / (b * d), RECOMMENDED_LOAD)
        self.b, self.d, self.n, self.slot_size = b, d, n, slot_size
        # Slot contents live in a flat list; the array form is rebuilt on demand.
        self._slots: list[bytes | None] = [None] * (b * d)
        self._array: np.ndarray | None = None
        self._occ: list[list[int]] = [[-1] * d for _ in range(b)]
        # item id -> [beta1, beta2, bucket, slot, Item]
        self._items: dict[int, list] = {}
        self._fifo: deque[int] = deque()
        self._next_id = 0
        self._rng = PrfStream(s_cuckoo)
        self.writes = 0
        self.overflow_count = 0

    def __len__(self) -> int:
        return len(self._items)

    @property
    def load(self) -> float:
        return self.n / (self.b * self.d)

    @property
    def data(self) -> np.ndarray:
        """``(b, d, slot_size)`` uint8 view of the table; empty slots are zero."""
        if self._array is None:
            empty = bytes(self.slot_size)
            flat = b"".join(empty if x is None else x for x in self._slots)
            self._array = np.frombuffer(flat, dtype=np.uint8).reshape(self.b, self.d, self.slot_size)
        return self._array

    def _free_slot(self, bucket: int) -> int:
        try:
            return self._occ[bucket].index(-1)
        except ValueError:
            return -1

    def _put(self, item_id: int, bucket: int, slot: int):
        rec = self._items[item_id]
        rec[2], rec[3] = bucket, slot
        self._occ[bucket][slot] = item_id
        self._slots[bucket * self.d + slot] = rec[4].data
        self._array = None

    def _clear(self, bucket: int, slot: int):
        self._occ[bucket][slot] = -1
        self._slots[bucket * self.d + slot] = None
        self._array = None

    def _expire_oldest(self) -> int | None:
        while self._fifo:
            item_id = self._fifo.popleft()
            rec = self._items.pop(item_id, None)
            if rec is not None:
                self._clear(rec[2], rec[3])
                return item_id
        return None

    def insert(self, item: Item) -> InsertReport:
        if not (0 <= item.beta1 < self.b and 0 <= item.beta2 < self.b):
            raise Malformed("bucket index out of range")
        if len(item.data) != self.slot_size:
            raise Malformed(f"item data must be {self.slot_size} bytes")
        self.writes += 1
        report = InsertReport(placed_at=None)
        if len(self._items) >= self.n:
            report.expired = self._expire_oldest()

        item_id = self._next_id
        self._next_id += 1
        self._items[item_id] = [item.beta1, item.beta2, -1, -1, item]
        self._fifo.append(item_id)

        for bucket in (item.beta1, item.beta2):
            slot = self._free_slot(bucket)
            if slot >= 0:
                self._put(item_id, bucket, slot)
                report.placed_at = (bucket, slot)
                return report

        # Both candidates full: bucket draw first, then one slot draw per eviction.
        bucket = (item.beta1, item.beta2)[self._rng.draw(2)]
        moving = item_id
        while True:
            slot = self._free_slot(bucket)
            if slot >= 0:
                self._put(moving, bucket, slot)
                return self._finish(report, item_id)
            if report.evictions >= MAX_DISPLACEMENTS:
                dropped = self._items.pop(moving)
                report.dropped = dropped[4]
                self.overflow_count += 1
                log.warning("eviction chain exceeded %d; dropped one item", MAX_DISPLACEMENTS)
                return self._finish(report, item_id)
            slot = self._rng.draw(self.d)
            victim = self._occ[bucket][slot]
            self._put(moving, bucket, slot)
            report.evictions += 1
            vrec = self._items[victim]
            alt = vrec[1] if bucket == vrec[0] else vrec[0]
            report.displaced_chain.append((victim, bucket, alt))
            vrec[2], vrec[3] = -1, -1
            moving, bucket = victim, alt

    def _finish(self, report: InsertReport, item_id: int) -> InsertReport:
        rec = self._items.get(item_id)
        if rec is not None:
            report.placed_at = (rec[2], rec[3])
        return report

    def live_items(self):
        """Yield ``(item, bucket, slot)`` for every live item."""
        for rec in self._items.values():
            yield rec[4], rec[2], rec[3]

    def oldest(self) -> Item | None:
        for item_id in self._fifo:
            rec = self._items.get(item_id)
            if rec is not None:
                return rec[4]
        return None

    def read_bucket(self, i: int) -> bytes:
        """Direct, non-private bucket read."""
        if not 0 <= i < self.b:
            raise InvalidIndex(i)
        empty = bytes(self.slot_size)
        return b"".join(empty if x is None else x for x in self._slots[i * self.d:(i + 1) * self.d])

    def snapshot(self) -> Snapshot:
        return Snapshot(self.writes, self.data.reshape(self.b, self.d * self.slot_size).copy())


def new_table(b: int, d: int, n: int, s_cuckoo: bytes, slot_size: int) -> Table:
    return Table(b, d, n, s_cuckoo, slot_size)


def ttl_seconds(n: int, m: int, w: float) -> float:
    """Seconds a message survives: capacity over aggregate write rate."""
    if m <= 0 or w <= 0:
        raise ValueError("m and w must be positive")
    return n / (m * w)


def load_factor(n: int, b: int, d: int) -> float:
    return n / (b * d)
