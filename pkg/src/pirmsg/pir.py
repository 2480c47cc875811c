"""Multi-server XOR PIR over bucket snapshots, plain and leader-serialized.

A database is a :class:`Snapshot`: ``b`` equal-length byte blocks (one per
cuckoo bucket). Query vectors are numpy boolean arrays of length ``b``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import crypto
from .errors import InvalidIndex, LengthMismatch

# Rows XOR-reduced per step; keeps the gathered chunk cache-sized.
_CHUNK_ROWS = 256


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Immutable bucket-major database copy at a given epoch."""

    epoch: int
    buckets: np.ndarray  # (b, bucket_len) uint8, read-only
    _words: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        buckets = np.ascontiguousarray(self.buckets, dtype=np.uint8)
        if buckets.ndim != 2:
            raise ValueError("buckets must be a 2-D array")
        buckets.setflags(write=False)
        object.__setattr__(self, "buckets", buckets)
        width = buckets.shape[1]
        words = buckets.view(np.uint64) if width % 8 == 0 and width else buckets
        object.__setattr__(self, "_words", words)

    @classmethod
    def from_blocks(cls, blocks: list[bytes], epoch: int = 0) -> "Snapshot":
        if not blocks:
            raise ValueError("need at least one block")
        width = len(blocks[0])
        if any(len(x) != width for x in blocks):
            raise LengthMismatch("all buckets must have equal length")
        arr = np.frombuffer(b"".join(blocks), dtype=np.uint8).reshape(len(blocks), width)
        return cls(epoch, arr)

    @property
    def bucket_count(self) -> int:
        return self.buckets.shape[0]

    @property
    def bucket_len(self) -> int:
        return self.buckets.shape[1]

    def bucket(self, i: int) -> bytes:
        if not 0 <= i < self.bucket_count:
            raise InvalidIndex(i)
        return self.buckets[i].tobytes()

    def digest(self) -> bytes:
        return hashlib.blake2b(self.buckets.data, digest_size=32).digest()


def _random_bits(n: int, randbytes) -> np.ndarray:
    raw = np.frombuffer(randbytes((n + 7) // 8), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].astype(bool)


def gen_queries(target: int, bucket_count: int, server_count: int, randbytes=os.urandom) -> list[np.ndarray]:
    """Split the unit vector for ``target`` into ``server_count`` XOR shares.

    The first ``server_count - 1`` shares are uniform; the last one is the XOR
    of those with the unit vector. ``randbytes`` supplies the randomness
    (OS entropy unless a seeded source is injected).
    """
    if not 0 <= target < bucket_count:
        raise InvalidIndex(f"target {target} outside [0, {bucket_count})")
    if server_count < 2:
        raise ValueError("need at least two servers")
    shares = [_random_bits(bucket_count, randbytes) for _ in range(server_count - 1)]
    last = np.zeros(bucket_count, dtype=bool)
    last[target] = True
    for s in shares:
        last ^= s
    shares.append(last)
    return shares


def encode_query(q: np.ndarray) -> bytes:
    """Bit ``j`` lands in byte ``j // 8`` at bit position ``j % 8``."""
    return np.packbits(np.asarray(q, dtype=bool), bitorder="little").tobytes()


def decode_query(data: bytes, bucket_count: int) -> np.ndarray:
    if len(data) != (bucket_count + 7) // 8:
        raise LengthMismatch("query length does not match bucket count")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return bits[:bucket_count].astype(bool)


def answer(snap: Snapshot, q: np.ndarray) -> bytes:
    """XOR of every bucket whose query bit is set."""
    q = np.asarray(q, dtype=bool)
    if q.shape != (snap.bucket_count,):
        raise LengthMismatch(f"query has {q.size} bits, snapshot has {snap.bucket_count} buckets")
    words = snap._words
    acc = np.zeros(words.shape[1], dtype=words.dtype)
    idx = np.flatnonzero(q)
    for start in range(0, idx.size, _CHUNK_ROWS):
        acc ^= np.bitwise_xor.reduce(words[idx[start:start + _CHUNK_ROWS]], axis=0)
    return acc.tobytes()


def answer_batch(snap: Snapshot, queries: list[np.ndarray]) -> list[bytes]:
    """Answer several queries while streaming the database once."""
    qs = np.asarray(queries, dtype=bool)
    if qs.ndim != 2 or qs.shape[1] != snap.bucket_count:
        raise LengthMismatch("every query must have one bit per bucket")
    words = snap._words
    acc = np.zeros((qs.shape[0], words.shape[1]), dtype=words.dtype)
    for start in range(0, snap.bucket_count, _CHUNK_ROWS):
        block = words[start:start + _CHUNK_ROWS]
        sel = qs[:, start:start + _CHUNK_ROWS]
        for k in range(qs.shape[0]):
            rows = block[sel[k]]
            if rows.shape[0]:
                acc[k] ^= np.bitwise_xor.reduce(rows, axis=0)
    return [row.tobytes() for row in acc]


def xor_blocks(blocks: list[bytes]) -> bytes:
    if not blocks:
        raise ValueError("need at least one block")
    width = len(blocks[0])
    if any(len(x) != width for x in blocks):
        raise LengthMismatch("blocks differ in length")
    acc = np.zeros(width, dtype=np.uint8)
    for x in blocks:
        acc ^= np.frombuffer(x, dtype=np.uint8)
    return acc.tobytes()


def reconstruct(answers: list[bytes]) -> bytes:
    return xor_blocks(answers)


def mask_answer(a: bytes, mask_seed: bytes) -> bytes:
    """XOR with the seed's expanded one-time pad (self-inverse)."""
    pad = np.frombuffer(crypto.prng_expand(mask_seed, len(a)), dtype=np.uint8)
    return (np.frombuffer(a, dtype=np.uint8) ^ pad).tobytes()


def combine_masked(masked: list[bytes]) -> bytes:
    return xor_blocks(masked)


def unmask(combined: bytes, mask_seeds: list[bytes]) -> bytes:
    out = combined
    for seed in mask_seeds:
        out = mask_answer(out, seed)
    return out
