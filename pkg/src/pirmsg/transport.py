"""Binary wire protocol and authenticated session layer.

Frame: ``length (u32 BE) | kind (u8) | payload``. After the handshake every
frame is carried as ``u32 BE length | secretbox(frame)`` under a per-direction
key with a counter nonce. Reply kinds (WriteAck, ReadReply, UpdatesReply,
MaskedAnswer) start with a 32-bit correlation id equal to the request's
position in the session.
"""

from __future__ import annotations

import enum
import hashlib
import socket
import struct
from dataclasses import dataclass

import nacl.bindings as sodium

from . import crypto
from .config import Config
from .errors import AuthFailure, DecodeError, HandshakeError
from .logproto import WriteRequest
from .notify import BloomParams, InterestVector, decode_interest, encode_interest

MAX_FRAME = 64 << 20
NO_EPOCH = (1 << 64) - 1
_HDR = struct.Struct(">IB")


class Kind(enum.IntEnum):
    WRITE = 0x01
    READ = 0x02
    GET_UPDATES = 0x03
    WRITE_ACK = 0x04
    READ_REPLY = 0x05
    UPDATES_REPLY = 0x06
    SEQUENCED_WRITE = 0x10
    MASKED_ANSWER = 0x11
    ERROR = 0x7F


class Status(enum.IntEnum):
    OK = 0
    RATE_LIMITED = 1
    MALFORMED = 2


class SeqOp(enum.IntEnum):
    WRITE = 0
    SEAL = 1
    HELLO = 2


@dataclass(frozen=True)
class Frame:
    kind: Kind
    payload: bytes

    def encode(self) -> bytes:
        return _HDR.pack(len(self.payload), self.kind) + self.payload


def decode_frame(data: bytes) -> Frame:
    if len(data) < _HDR.size:
        raise DecodeError("frame shorter than header")
    length, kind = _HDR.unpack_from(data)
    if length != len(data) - _HDR.size:
        raise DecodeError("frame length field does not match payload")
    try:
        kind = Kind(kind)
    except ValueError:
        raise DecodeError(f"unknown frame kind {kind:#x}") from None
    return Frame(kind, data[_HDR.size:])


# -- message payloads -------------------------------------------------------

@dataclass(frozen=True)
class ReadRequest:
    epoch: int
    eph_public: bytes
    blobs: tuple[bytes, ...]


@dataclass(frozen=True)
class UpdatesReply:
    window_epoch: int
    deltas: tuple[tuple[int, bytes], ...]
    signatures: tuple[bytes, ...]


def bloom_params(cfg: Config) -> BloomParams:
    return BloomParams(*cfg.bloom)


def write_len(cfg: Config) -> int:
    return 8 + cfg.slot_size + bloom_params(cfg).wire_cap


def encode_write(w: WriteRequest, cfg: Config) -> bytes:
    if len(w.data) != cfg.slot_size:
        raise ValueError("write data has wrong length")
    params = bloom_params(cfg)
    iv = InterestVector(tuple(sorted(set(w.interest))), params)
    return struct.pack(">II", w.beta1, w.beta2) + w.data + encode_interest(iv)


def decode_write(payload: bytes, cfg: Config) -> WriteRequest:
    if len(payload) != write_len(cfg):
        raise DecodeError(f"write payload must be {write_len(cfg)} bytes, got {len(payload)}")
    b1, b2 = struct.unpack_from(">II", payload)
    data = payload[8:8 + cfg.slot_size]
    iv = decode_interest(payload[8 + cfg.slot_size:], bloom_params(cfg))
    return WriteRequest(b1, b2, data, iv.positions)


def blob_len(cfg: Config) -> int:
    return cfg.query_bytes + crypto.SEED_BYTES + crypto.TAG_BYTES


def read_len(cfg: Config) -> int:
    return 8 + crypto.PK_BYTES + cfg.l * blob_len(cfg)


def encode_read(req: ReadRequest, cfg: Config) -> bytes:
    if len(req.blobs) != cfg.l or any(len(b) != blob_len(cfg) for b in req.blobs):
        raise ValueError("read request needs l blobs of fixed length")
    return struct.pack(">Q", req.epoch) + req.eph_public + b"".join(req.blobs)


def decode_read(payload: bytes, cfg: Config) -> ReadRequest:
    head = 8 + crypto.PK_BYTES
    if len(payload) < head:
        raise DecodeError("read payload truncated")
    body = len(payload) - head
    bl = blob_len(cfg)
    if body % bl or body // bl != cfg.l:
        raise DecodeError(f"read request must carry exactly {cfg.l} blobs")
    (epoch,) = struct.unpack_from(">Q", payload)
    blobs = tuple(payload[head + i * bl: head + (i + 1) * bl] for i in range(cfg.l))
    return ReadRequest(epoch, payload[8:head], blobs)


def encode_get_updates(since_epoch: int | None) -> bytes:
    return struct.pack(">Q", NO_EPOCH if since_epoch is None else since_epoch)


def decode_get_updates(payload: bytes) -> int | None:
    if len(payload) != 8:
        raise DecodeError("get-updates payload must be 8 bytes")
    (v,) = struct.unpack(">Q", payload)
    return None if v == NO_EPOCH else v


def encode_write_ack(corr: int, status: Status, signature: bytes = b"") -> bytes:
    return struct.pack(">IB", corr, status) + signature


def decode_write_ack(payload: bytes) -> tuple[int, Status, bytes]:
    if len(payload) not in (5, 5 + crypto.SIG_BYTES):
        raise DecodeError("bad write-ack length")
    corr, status = struct.unpack_from(">IB", payload)
    try:
        return corr, Status(status), payload[5:]
    except ValueError:
        raise DecodeError("unknown ack status") from None


def encode_block_reply(corr: int, block: bytes) -> bytes:
    return struct.pack(">I", corr) + block


def decode_block_reply(payload: bytes, block_len: int) -> tuple[int, bytes]:
    if len(payload) != 4 + block_len:
        raise DecodeError("reply block has wrong length")
    return struct.unpack_from(">I", payload)[0], payload[4:]


def encode_updates(corr: int, rep: UpdatesReply) -> bytes:
    out = bytearray(struct.pack(">IQH", corr, rep.window_epoch, len(rep.deltas)))
    for e, enc in rep.deltas:
        out += struct.pack(">QI", e, len(enc)) + enc
    out.append(len(rep.signatures))
    for sig in rep.signatures:
        out += sig.ljust(crypto.SIG_BYTES, b"\0")
    return bytes(out)


def decode_updates(payload: bytes) -> tuple[int, UpdatesReply]:
    try:
        corr, window_epoch, count = struct.unpack_from(">IQH", payload)
        pos = 14
        deltas = []
        for _ in range(count):
            e, n = struct.unpack_from(">QI", payload, pos)
            pos += 12
            if pos + n > len(payload):
                raise DecodeError("delta overruns payload")
            deltas.append((e, payload[pos:pos + n]))
            pos += n
        nsig = payload[pos]
        pos += 1
        if pos + nsig * crypto.SIG_BYTES != len(payload):
            raise DecodeError("signature block has wrong length")
        sigs = tuple(payload[pos + i * 64: pos + (i + 1) * 64] for i in range(nsig))
    except (struct.error, IndexError):
        raise DecodeError("truncated updates reply") from None
    return corr, UpdatesReply(window_epoch, tuple(deltas), sigs)


def encode_sequenced(global_seq: int, op: SeqOp, body: bytes = b"") -> bytes:
    return struct.pack(">QB", global_seq, op) + body


def decode_sequenced(payload: bytes) -> tuple[int, SeqOp, bytes]:
    if len(payload) < 9:
        raise DecodeError("sequenced op truncated")
    seq, op = struct.unpack_from(">QB", payload)
    try:
        return seq, SeqOp(op), payload[9:]
    except ValueError:
        raise DecodeError("unknown sequenced op") from None


def encode_error(code: int, msg: str) -> bytes:
    return bytes([code]) + msg.encode()[:1024]


def decode_error(payload: bytes) -> tuple[int, str]:
    if not payload:
        raise DecodeError("empty error payload")
    return payload[0], payload[1:].decode(errors="replace")


# -- session ----------------------------------------------------------------

HELLO_LEN = 2 * crypto.PK_BYTES
CONFIRM_LEN = 32 + crypto.TAG_BYTES


def _nonce(counter: int) -> bytes:
    return counter.to_bytes(crypto.NONCE_BYTES, "little")


@dataclass
class SessionCipher:
    """One direction-pair of counter-nonce secretbox keys."""

    send_key: bytes
    recv_key: bytes
    session_id: bytes
    peer_static: bytes
    send_ctr: int = 1
    recv_ctr: int = 1

    def seal(self, frame: bytes) -> bytes:
        ct = crypto.seal(self.send_key, _nonce(self.send_ctr), frame)
        self.send_ctr += 1
        return ct

    def open(self, data: bytes) -> bytes:
        pt = crypto.open(self.recv_key, _nonce(self.recv_ctr), data)
        self.recv_ctr += 1
        return pt

    @property
    def peer_fingerprint(self) -> bytes:
        return hashlib.blake2b(self.peer_static, digest_size=8).digest()


def _derive(dh1: bytes, dh2: bytes, transcript: bytes) -> tuple[bytes, bytes, bytes]:
    okm = hashlib.blake2b(dh1 + dh2, key=hashlib.blake2b(transcript, digest_size=32).digest(),
                          digest_size=64).digest()
    sid = hashlib.blake2b(transcript, digest_size=8, person=b"session-id").digest()
    return okm[:32], okm[32:], sid


class ClientHandshake:
    """Initiator side: one flight out, one confirmation back."""

    def __init__(self, static: crypto.KeyPair, server_public: bytes):
        self.static = static
        self.server_public = server_public
        self.eph = crypto.KeyPair.generate()

    def hello(self) -> bytes:
        return self.eph.public + self.static.public

    def finish(self, confirm: bytes) -> SessionCipher:
        transcript = self.hello() + self.server_public
        dh1 = sodium.crypto_scalarmult(self.eph.secret, self.server_public)
        dh2 = sodium.crypto_scalarmult(self.static.secret, self.server_public)
        c2s, s2c, sid = _derive(dh1, dh2, transcript)
        try:
            got = crypto.open(s2c, _nonce(0), confirm)
        except AuthFailure as exc:
            raise HandshakeError("server failed to prove key possession") from exc
        if got != hashlib.blake2b(transcript, digest_size=32).digest():
            raise HandshakeError("handshake transcript mismatch")
        return SessionCipher(c2s, s2c, sid, self.server_public)


def server_handshake(static: crypto.KeyPair, hello: bytes) -> tuple[bytes, SessionCipher]:
    if len(hello) != HELLO_LEN:
        raise HandshakeError("hello has wrong length")
    eph_pub, client_pub = hello[:32], hello[32:]
    transcript = hello + static.public
    try:
        dh1 = sodium.crypto_scalarmult(static.secret, eph_pub)
        dh2 = sodium.crypto_scalarmult(static.secret, client_pub)
    except Exception as exc:
        raise HandshakeError("bad client key") from exc
    c2s, s2c, sid = _derive(dh1, dh2, transcript)
    confirm = crypto.seal(s2c, _nonce(0), hashlib.blake2b(transcript, digest_size=32).digest())
    return confirm, SessionCipher(s2c, c2s, sid, client_pub)


# -- socket helpers ---------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed connection")
        buf += chunk
    return bytes(buf)


def send_sealed(sock: socket.socket, cipher: SessionCipher, frame: Frame):
    ct = cipher.seal(frame.encode())
    sock.sendall(struct.pack(">I", len(ct)) + ct)


def recv_sealed(sock: socket.socket, cipher: SessionCipher) -> Frame:
    (n,) = struct.unpack(">I", _recv_exact(sock, 4))
    if n > MAX_FRAME:
        raise DecodeError("frame too large")
    return decode_frame(cipher.open(_recv_exact(sock, n)))


def connect(address: tuple[str, int], static: crypto.KeyPair, server_public: bytes,
            timeout: float | None = 10.0) -> tuple[socket.socket, SessionCipher]:
    sock = socket.create_connection(address, timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    hs = ClientHandshake(static, server_public)
    try:
        sock.sendall(hs.hello())
        cipher = hs.finish(_recv_exact(sock, CONFIRM_LEN))
    except (HandshakeError, ConnectionError):
        sock.close()
        raise
    return sock, cipher


def accept(sock: socket.socket, static: crypto.KeyPair) -> SessionCipher:
    confirm, cipher = server_handshake(static, _recv_exact(sock, HELLO_LEN))
    sock.sendall(confirm)
    return cipher
