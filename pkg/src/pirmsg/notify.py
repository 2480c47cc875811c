"""Bloom-filter interest vectors and the windowed global interest vector.

Each write carries the Bloom positions of ``log id | seqNo`` (or of random
bytes for a dummy write). Servers OR them into the newest delta of a sliding
window; at every rotation the closed delta is published and all servers sign
the published window. Deltas travel as sorted set-bit indices with varint gap
coding.
"""

from __future__ import annotations

import hashlib
import os
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import crypto
from .errors import DecodeError


@dataclass(frozen=True)
class BloomParams:
    m_bits: int
    h: int

    @property
    def wire_cap(self) -> int:
        """Fixed byte length of an encoded single-insertion interest vector."""
        return varint_len(self.h) + self.h * varint_len(max(self.m_bits - 1, 1))


@dataclass(frozen=True)
class InterestVector:
    positions: tuple[int, ...]  # sorted, unique
    params: BloomParams

    def bits(self) -> np.ndarray:
        out = np.zeros(self.params.m_bits, dtype=bool)
        out[list(self.positions)] = True
        return out


def interest_item(log_id: bytes, seqno: int) -> bytes:
    return log_id + struct.pack(">Q", seqno)


def make_interest(log_id: bytes, seqno: int, params: BloomParams) -> InterestVector:
    pos = crypto.bloom_positions(interest_item(log_id, seqno), params.h, params.m_bits)
    return InterestVector(tuple(sorted(set(pos))), params)


def make_fake_interest(params: BloomParams, randbytes=os.urandom) -> InterestVector:
    pos = crypto.bloom_positions(randbytes(24), params.h, params.m_bits)
    return InterestVector(tuple(sorted(set(pos))), params)


# -- varint gap coding ------------------------------------------------------

def varint_len(v: int) -> int:
    return max(1, (v.bit_length() + 6) // 7)


def _put_varint(out: bytearray, v: int):
    while True:
        byte = v & 0x7F
        v >>= 7
        if v:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _get_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = v = 0
    while True:
        if pos >= len(data):
            raise DecodeError("truncated varint")
        byte = data[pos]
        pos += 1
        v |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return v, pos
        shift += 7
        if shift > 63:
            raise DecodeError("varint too long")


def encode_positions(positions) -> bytes:
    """Count, then the first index, then gaps between consecutive sorted indices."""
    positions = sorted(positions)
    out = bytearray()
    _put_varint(out, len(positions))
    prev = 0
    for i, p in enumerate(positions):
        _put_varint(out, p - prev if i else p)
        prev = p
    return bytes(out)


def decode_positions(data: bytes, m_bits: int, exact: bool = True) -> tuple[list[int], int]:
    """Inverse of :func:`encode_positions`; returns positions and bytes consumed."""
    count, pos = _get_varint(data, 0)
    if count > m_bits:
        raise DecodeError("more positions than filter bits")
    out, cur = [], 0
    for i in range(count):
        gap, pos = _get_varint(data, pos)
        if i and gap == 0:
            raise DecodeError("positions must be strictly increasing")
        cur = cur + gap if i else gap
        if cur >= m_bits:
            raise DecodeError("position outside filter")
        out.append(cur)
    if exact and pos != len(data):
        raise DecodeError("trailing bytes after positions")
    return out, pos


def encode_interest(iv: InterestVector) -> bytes:
    """Fixed-length wire form: gap coding zero-padded to the deployment cap."""
    raw = encode_positions(iv.positions)
    cap = iv.params.wire_cap
    return raw + bytes(cap - len(raw))


def decode_interest(data: bytes, params: BloomParams) -> InterestVector:
    if len(data) != params.wire_cap:
        raise DecodeError("interest field has wrong length")
    positions, used = decode_positions(data, params.m_bits, exact=False)
    if any(data[used:]):
        raise DecodeError("non-zero interest padding")
    if len(positions) > params.h:
        raise DecodeError("too many interest positions")
    return InterestVector(tuple(positions), params)


def giv_encode_delta(delta: np.ndarray) -> bytes:
    return encode_positions(np.flatnonzero(delta).tolist())


def giv_decode_delta(data: bytes, m_bits: int) -> np.ndarray:
    positions, _ = decode_positions(data, m_bits)
    out = np.zeros(m_bits, dtype=bool)
    out[positions] = True
    return out


# -- global interest vector -------------------------------------------------

class GlobalInterestVector:
    """Sliding window of Bloom deltas.

    ``deltas`` holds up to ``window`` closed (published) deltas, oldest first,
    each tagged with its epoch. Absorbed positions go into the open delta,
    which is published at the next :meth:`rotate`.
    """

    def __init__(self, params: BloomParams, window: int):
        if window < 1:
            raise ValueError("window must be positive")
        self.params = params
        self.window = window
        self.deltas: deque[tuple[int, np.ndarray]] = deque()
        self.open = np.zeros(params.m_bits, dtype=bool)
        self.open_epoch = 0
        self.signatures: dict[int, bytes] = {}
        self._published: np.ndarray | None = None
        self._enc: dict[int, bytes] = {}
        self._digest: bytes | None = None

    def copy(self) -> "GlobalInterestVector":
        """Independent copy; closed delta arrays are shared since they are never mutated."""
        g = GlobalInterestVector(self.params, self.window)
        g.deltas = deque(self.deltas)
        g.open = self.open.copy()
        g.open_epoch = self.open_epoch
        g.signatures = dict(self.signatures)
        g._published = self._published
        g._enc = dict(self._enc)
        g._digest = self._digest
        return g

    @property
    def window_epoch(self) -> int:
        """Epoch of the oldest published delta (the open epoch if none)."""
        return self.deltas[0][0] if self.deltas else self.open_epoch

    def absorb(self, iv: InterestVector | tuple[int, ...]):
        positions = iv.positions if isinstance(iv, InterestVector) else iv
        self.open[list(positions)] = True

    def rotate(self):
        self.deltas.append((self.open_epoch, self.open))
        self.open = np.zeros(self.params.m_bits, dtype=bool)
        self.open_epoch += 1
        while len(self.deltas) > self.window:
            self.deltas.popleft()
        self.signatures = {}
        self._invalidate()

    def _invalidate(self):
        self._published = None
        self._digest = None
        live = {e for e, _ in self.deltas}
        self._enc = {e: v for e, v in self._enc.items() if e in live}

    def _encoded(self, epoch: int, delta: np.ndarray) -> bytes:
        # Closed deltas never change, so their encodings are cached.
        enc = self._enc.get(epoch)
        if enc is None:
            enc = self._enc[epoch] = giv_encode_delta(delta)
        return enc

    def published(self) -> np.ndarray:
        if self._published is None:
            acc = np.zeros(self.params.m_bits, dtype=bool)
            for _, d in self.deltas:
                acc |= d
            self._published = acc
        return self._published

    def effective(self) -> np.ndarray:
        return self.published() | self.open

    def check(self, log_id: bytes, seqno: int, published_only: bool = False,
              since_epoch: int | None = None) -> bool:
        """Bloom membership test for one interest item.

        Args:
            published_only: ignore the open delta.
            since_epoch: only consult published deltas newer than this epoch
                (plus the open delta unless ``published_only``).
        """
        pos = crypto.bloom_positions(interest_item(log_id, seqno), self.params.h, self.params.m_bits)
        if since_epoch is None:
            bits = self.published() if published_only else self.effective()
            return bool(bits[pos].all())
        hit = np.zeros(len(pos), dtype=bool) if published_only else self.open[pos].copy()
        for e, d in self.deltas:
            if e > since_epoch:
                hit |= d[pos]
        return bool(hit.all())

    def first_epoch(self, log_id: bytes, seqno: int) -> int | None:
        """Oldest published delta that tests positive for the item, or None."""
        pos = crypto.bloom_positions(interest_item(log_id, seqno), self.params.h, self.params.m_bits)
        for e, d in self.deltas:
            if d[pos].all():
                return e
        return None

    def encoded_deltas(self, since_epoch: int | None = None) -> list[tuple[int, bytes]]:
        """Published deltas newer than ``since_epoch`` (all of them if None or too stale)."""
        if since_epoch is not None and since_epoch < self.window_epoch - 1:
            since_epoch = None
        return [(e, self._encoded(e, d)) for e, d in self.deltas
                if since_epoch is None or e > since_epoch]

    def digest(self) -> bytes:
        if self._digest is None:
            self._digest = window_digest(self.window_epoch, self.encoded_deltas())
        return self._digest

    def state_digest(self) -> bytes:
        """Digest of published and open state, for replica comparison."""
        h = hashlib.blake2b(self.digest(), digest_size=32)
        h.update(struct.pack(">Q", self.open_epoch))
        h.update(np.packbits(self.open).tobytes())
        return h.digest()

    def apply_update(self, window_epoch: int, deltas: list[tuple[int, bytes]]):
        """Client side: merge published deltas received from the leader."""
        have = {e for e, _ in self.deltas}
        for e, enc in deltas:
            if e not in have:
                self.deltas.append((e, giv_decode_delta(enc, self.params.m_bits)))
                self._enc[e] = bytes(enc)
        self.deltas = deque(sorted((x for x in self.deltas if x[0] >= window_epoch), key=lambda x: x[0]))
        while len(self.deltas) > self.window:
            self.deltas.popleft()
        if self.deltas:
            self.open_epoch = self.deltas[-1][0] + 1
        self._invalidate()

    def latest_epoch(self) -> int | None:
        return self.deltas[-1][0] if self.deltas else None


def window_digest(window_epoch: int, deltas: list[tuple[int, bytes]]) -> bytes:
    h = hashlib.blake2b(digest_size=32, person=b"giv-window")
    h.update(struct.pack(">Q", window_epoch))
    for e, enc in deltas:
        h.update(struct.pack(">QI", e, len(enc)))
        h.update(enc)
    return h.digest()


def _signed_message(window_epoch: int, digest: bytes) -> bytes:
    return b"giv" + struct.pack(">Q", window_epoch) + digest


def giv_sign(signing: crypto.SigningPair, g: GlobalInterestVector) -> bytes:
    return crypto.sign(signing.secret, _signed_message(g.window_epoch, g.digest()))


def giv_verify(publics: list[bytes], g: GlobalInterestVector, signatures: list[bytes] | dict[int, bytes]) -> bool:
    """True only if every server's signature over the published window verifies."""
    if isinstance(signatures, dict):
        signatures = [signatures.get(i, b"") for i in range(len(publics))]
    if len(signatures) != len(publics):
        return False
    msg = _signed_message(g.window_epoch, g.digest())
    return all(crypto.verify(pk, msg, sig) for pk, sig in zip(publics, signatures))
