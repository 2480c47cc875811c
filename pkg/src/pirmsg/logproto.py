"""Client-side oblivious logging: handles, write requests, read plans, control payloads.

A slot's data is ``nonce (24) | secretbox(seqNo (8, BE) | record (z))``. The
``z``-byte record starts with a 2-byte big-endian header whose top bit marks
"more chunks follow" and whose low 15 bits give the payload length; the rest
is zero padding.
"""

from __future__ import annotations

import enum
import json
import os
import secrets
import struct
from dataclasses import dataclass, field

from . import crypto
from .errors import AuthFailure, DecodeError, MessageTooLarge, NotFound

DUMMY_SEQNO = (1 << 64) - 1
_MORE = 0x8000


@dataclass(frozen=True)
class LogHandle:
    id: bytes
    k_enc: bytes
    k_s1: bytes
    k_s2: bytes

    def __post_init__(self):
        if (len(self.id), len(self.k_enc), len(self.k_s1), len(self.k_s2)) != (16, 32, 16, 16):
            raise ValueError("malformed log handle")

    def __eq__(self, other):
        return isinstance(other, LogHandle) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    def to_bytes(self) -> bytes:
        return self.id + self.k_enc + self.k_s1 + self.k_s2

    @classmethod
    def from_bytes(cls, data: bytes) -> "LogHandle":
        if len(data) != 80:
            raise DecodeError("log handle must be 80 bytes")
        return cls(data[:16], data[16:48], data[48:64], data[64:80])

    def to_json(self) -> str:
        return json.dumps({"id": self.id.hex(), "k_enc": self.k_enc.hex(),
                           "k_s1": self.k_s1.hex(), "k_s2": self.k_s2.hex()})

    @classmethod
    def from_json(cls, text: str) -> "LogHandle":
        d = json.loads(text)
        return cls(*(bytes.fromhex(d[k]) for k in ("id", "k_enc", "k_s1", "k_s2")))


def gen_handle(randbytes=os.urandom) -> LogHandle:
    return LogHandle(randbytes(16), randbytes(32), randbytes(16), randbytes(16))


@dataclass(frozen=True)
class WriteRequest:
    beta1: int
    beta2: int
    data: bytes
    interest: tuple[int, ...] = ()


@dataclass(frozen=True)
class Record:
    seqno: int
    payload: bytes
    more: bool = False


def _pack_record(seqno: int, payload: bytes, z: int, more: bool) -> bytes:
    if len(payload) > z - 2:
        raise MessageTooLarge(f"{len(payload)} bytes exceeds record capacity {z - 2}")
    header = len(payload) | (_MORE if more else 0)
    body = struct.pack(">H", header) + payload
    return struct.pack(">Q", seqno) + body + bytes(z - len(body))


def seal_record(h: LogHandle, seqno: int, payload: bytes, z: int, more: bool = False) -> bytes:
    nonce = crypto.derive_nonce(h.k_enc, h.id, struct.pack(">Q", seqno))
    return nonce + crypto.seal(h.k_enc, nonce, _pack_record(seqno, payload, z, more))


def real_write(h: LogHandle, seqno: int, msg: bytes, b: int, z: int,
               interest: tuple[int, ...] = (), more: bool = False) -> WriteRequest:
    """Write request placing ``msg`` at the PRF-chosen bucket pair for ``seqno``."""
    if b < 1:
        raise ValueError("bucket count must be positive")
    if len(msg) > z:
        raise MessageTooLarge(f"{len(msg)} bytes exceeds z={z}")
    data = seal_record(h, seqno, msg, z, more)
    return WriteRequest(crypto.prf(h.k_s1, seqno, b), crypto.prf(h.k_s2, seqno, b), data, tuple(interest))


def fake_write(b: int, z: int, interest: tuple[int, ...] = (), randbelow=secrets.randbelow,
               randbytes=os.urandom) -> WriteRequest:
    """Dummy write: random buckets, reserved seqNo and zeros under a throwaway key."""
    key = randbytes(crypto.SYM_KEY_BYTES)
    nonce = randbytes(crypto.NONCE_BYTES)
    data = nonce + crypto.seal(key, nonce, _pack_record(DUMMY_SEQNO, b"", z, False))
    return WriteRequest(randbelow(b), randbelow(b), data, tuple(interest))


class Attempt(enum.IntEnum):
    FIRST = 1
    SECOND = 2


@dataclass(frozen=True)
class ReadPlan:
    target_bucket: int
    expected: tuple[LogHandle, int] | None = None
    attempt: Attempt | None = None

    @property
    def is_fake(self) -> bool:
        return self.expected is None


def read_plan(h: LogHandle, seqno: int, attempt: Attempt, b: int) -> ReadPlan:
    key = h.k_s1 if attempt == Attempt.FIRST else h.k_s2
    return ReadPlan(crypto.prf(key, seqno, b), (h, seqno), Attempt(attempt))


def fake_read_plan(b: int, randbelow=secrets.randbelow) -> ReadPlan:
    return ReadPlan(randbelow(b))


def find_record(h: LogHandle, seqno: int, bucket: bytes, d: int, slot_size: int) -> Record:
    """Open each slot with the handle's key; return the record carrying ``seqno``."""
    if len(bucket) != d * slot_size:
        raise ValueError("bucket length does not match d * slot_size")
    n = crypto.NONCE_BYTES
    for s in range(d):
        slot = bucket[s * slot_size:(s + 1) * slot_size]
        try:
            plain = crypto.open(h.k_enc, slot[:n], slot[n:])
        except AuthFailure:
            continue
        (got,) = struct.unpack(">Q", plain[:8])
        if got != seqno:
            continue
        (header,) = struct.unpack(">H", plain[8:10])
        length = header & ~_MORE
        return Record(got, plain[10:10 + length], bool(header & _MORE))
    raise NotFound(f"seqNo {seqno} not in bucket")


def try_decrypt_bucket(h: LogHandle, seqno: int, bucket: bytes, d: int, slot_size: int) -> bytes:
    return find_record(h, seqno, bucket, d, slot_size).payload


class ControlKind(enum.IntEnum):
    LATEST_SEQNO_QUERY = 1
    LATEST_SEQNO_REPLY = 2
    RETRANSMIT_REQUEST = 3
    HEARTBEAT = 4
    HANDLE_GRANT = 5
    HANDLE_REVOKE = 6


@dataclass(frozen=True)
class ControlMessage:
    kind: ControlKind
    log_id: bytes = b""
    seqno: int = 0
    handle: LogHandle | None = field(default=None, compare=True)


def encode_control(msg: ControlMessage) -> bytes:
    k = msg.kind
    if k == ControlKind.HEARTBEAT:
        body = b""
    elif k in (ControlKind.LATEST_SEQNO_QUERY, ControlKind.HANDLE_REVOKE):
        body = msg.log_id
    elif k in (ControlKind.LATEST_SEQNO_REPLY, ControlKind.RETRANSMIT_REQUEST):
        body = msg.log_id + struct.pack(">Q", msg.seqno)
    elif k == ControlKind.HANDLE_GRANT:
        body = msg.handle.to_bytes()
    else:  # pragma: no cover - enum is closed
        raise ValueError(k)
    if k != ControlKind.HEARTBEAT and k != ControlKind.HANDLE_GRANT and len(msg.log_id) != 16:
        raise ValueError("control log id must be 16 bytes")
    return bytes([k]) + body


_CONTROL_LEN = {
    ControlKind.LATEST_SEQNO_QUERY: 16,
    ControlKind.LATEST_SEQNO_REPLY: 24,
    ControlKind.RETRANSMIT_REQUEST: 24,
    ControlKind.HEARTBEAT: 0,
    ControlKind.HANDLE_GRANT: 80,
    ControlKind.HANDLE_REVOKE: 16,
}


def decode_control(data: bytes) -> ControlMessage:
    if not data:
        raise DecodeError("empty control message")
    try:
        kind = ControlKind(data[0])
    except ValueError:
        raise DecodeError(f"unknown control tag {data[0]}") from None
    body = data[1:]
    if len(body) != _CONTROL_LEN[kind]:
        raise DecodeError(f"{kind.name} body must be {_CONTROL_LEN[kind]} bytes")
    if kind == ControlKind.HEARTBEAT:
        return ControlMessage(kind)
    if kind == ControlKind.HANDLE_GRANT:
        h = LogHandle.from_bytes(body)
        return ControlMessage(kind, h.id, handle=h)
    seqno = struct.unpack(">Q", body[16:])[0] if len(body) == 24 else 0
    return ControlMessage(kind, body[:16], seqno)

