"""TCP server nodes: the leader front end and follower back ends.

Each connection starts with the session handshake; after that both sides
exchange sealed frames. The leader holds two sessions per follower (one for
sequenced writes, one for reads) and authenticates itself to followers by its
static key.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time

from . import transport as tp
from .config import Config, ServerKeys
from .errors import DecodeError, EpochUnavailable, Malformed, PirMsgError, RateLimited
from .server import Leader, Replica
from .transport import Frame, Kind, SeqOp, Status

log = logging.getLogger(__name__)


def handle_client_frame(leader: Leader, cfg: Config, frame: Frame, corr: int, client_id: bytes) -> Frame:
    """Serve one client request at the leader and build the reply frame."""
    try:
        if frame.kind == Kind.WRITE:
            try:
                leader.process_write(tp.decode_write(frame.payload, cfg), client_id)
                status = Status.OK
            except RateLimited:
                status = Status.RATE_LIMITED
            except (Malformed, DecodeError):
                status = Status.MALFORMED
            return Frame(Kind.WRITE_ACK, tp.encode_write_ack(corr, status))
        if frame.kind == Kind.READ:
            block = leader.process_read(tp.decode_read(frame.payload, cfg))
            return Frame(Kind.READ_REPLY, tp.encode_block_reply(corr, block))
        if frame.kind == Kind.GET_UPDATES:
            rep = leader.process_get_updates(tp.decode_get_updates(frame.payload))
            return Frame(Kind.UPDATES_REPLY, tp.encode_updates(corr, rep))
        return Frame(Kind.ERROR, tp.encode_error(1, f"unexpected kind {frame.kind.name}"))
    except EpochUnavailable as exc:
        return Frame(Kind.ERROR, tp.encode_error(3, f"epoch unavailable: {exc}"))
    except (DecodeError, PirMsgError) as exc:
        return Frame(Kind.ERROR, tp.encode_error(2, str(exc)))


def handle_follower_frame(replica: Replica, cfg: Config, frame: Frame, corr: int) -> Frame:
    """Serve one leader-originated frame at a follower."""
    try:
        if frame.kind == Kind.SEQUENCED_WRITE:
            seq, op, body = tp.decode_sequenced(frame.payload)
            if op == SeqOp.HELLO:
                if body != cfg.fingerprint():
                    return Frame(Kind.ERROR, tp.encode_error(4, "configuration fingerprint mismatch"))
                return Frame(Kind.WRITE_ACK, tp.encode_write_ack(corr, Status.OK))
            write = tp.decode_write(body, cfg) if op == SeqOp.WRITE else None
            sig = replica.apply(seq, op, write)
            return Frame(Kind.WRITE_ACK, tp.encode_write_ack(corr, Status.OK, sig))
        if frame.kind == Kind.READ:
            req = tp.decode_read(frame.payload, cfg)
            block = replica.answer_read(req, req.epoch)
            return Frame(Kind.MASKED_ANSWER, tp.encode_block_reply(corr, block))
        return Frame(Kind.ERROR, tp.encode_error(1, f"unexpected kind {frame.kind.name}"))
    except (DecodeError, PirMsgError, RuntimeError) as exc:
        return Frame(Kind.ERROR, tp.encode_error(2, str(exc)))


class _Conn:
    """Blocking request/response session to a peer."""

    def __init__(self, address, static, server_public, timeout=30.0):
        self.sock, self.cipher = tp.connect(address, static, server_public, timeout=timeout)
        self.corr = 0
        self.lock = threading.Lock()

    def call(self, frame: Frame) -> Frame:
        with self.lock:
            tp.send_sealed(self.sock, self.cipher, frame)
            reply = tp.recv_sealed(self.sock, self.cipher)
            self.corr += 1
        return reply

    def close(self):
        self.sock.close()


class RemoteError(PirMsgError):
    pass


class RemoteFollower:
    """Leader-side handle for a follower reached over the network."""

    def __init__(self, cfg: Config, index: int, static):
        info = cfg.servers[index]
        self.cfg = cfg
        self.index = index
        self._writes = _Conn(info.host_port, static, info.public_key)
        self._reads = _Conn(info.host_port, static, info.public_key)
        reply = self._writes.call(Frame(Kind.SEQUENCED_WRITE, tp.encode_sequenced(0, SeqOp.HELLO, cfg.fingerprint())))
        if reply.kind != Kind.WRITE_ACK:
            raise RemoteError(f"follower {index} refused: {tp.decode_error(reply.payload)[1]}")

    def apply(self, global_seq: int, op: SeqOp, write=None) -> bytes:
        body = tp.encode_write(write, self.cfg) if write is not None else b""
        reply = self._writes.call(Frame(Kind.SEQUENCED_WRITE, tp.encode_sequenced(global_seq, op, body)))
        if reply.kind != Kind.WRITE_ACK:
            raise RemoteError(f"follower {self.index}: {tp.decode_error(reply.payload)[1]}")
        return tp.decode_write_ack(reply.payload)[2]

    def answer(self, req: tp.ReadRequest, epoch: int) -> bytes:
        fwd = tp.ReadRequest(epoch, req.eph_public, req.blobs)
        reply = self._reads.call(Frame(Kind.READ, tp.encode_read(fwd, self.cfg)))
        if reply.kind != Kind.MASKED_ANSWER:
            raise RemoteError(f"follower {self.index}: {tp.decode_error(reply.payload)[1]}")
        return tp.decode_block_reply(reply.payload, self.cfg.bucket_len)[1]

    def close(self):
        self._writes.close()
        self._reads.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        node: ServerNode = self.server.node
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            cipher = tp.accept(sock, node.keys.box)
        except (PirMsgError, ConnectionError, OSError) as exc:
            log.info("handshake failed: %s", exc)
            return
        leader_pk = node.cfg.servers[0].public_key
        corr = 0
        while True:
            try:
                frame = tp.recv_sealed(sock, cipher)
            except (ConnectionError, OSError):
                return
            except PirMsgError as exc:
                log.warning("dropping session after bad frame: %s", exc)
                return
            if node.leader is not None:
                reply = handle_client_frame(node.leader, node.cfg, frame, corr, cipher.peer_fingerprint)
            elif cipher.peer_static != leader_pk:
                reply = Frame(Kind.ERROR, tp.encode_error(5, "followers only serve the leader"))
            else:
                reply = handle_follower_frame(node.replica, node.cfg, frame, corr)
            corr += 1
            try:
                tp.send_sealed(sock, cipher, reply)
            except OSError:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class ServerNode:
    """One server process: a follower, or the leader plus its follower sessions.

    Args:
        cfg: cluster configuration; ``cfg.servers[index]`` must carry a secret seed.
        index: 0 for the leader.
        connect_timeout: how long the leader keeps retrying follower connections.
    """

    def __init__(self, cfg: Config, index: int, keys: ServerKeys | None = None, connect_timeout: float = 10.0):
        if keys is None:
            seed = cfg.servers[index].secret_seed
            if seed is None:
                raise ValueError(f"no secret seed for server {index}")
            keys = ServerKeys.from_seed(seed)
        if keys.box.public != cfg.servers[index].public_key:
            raise ValueError("server keys do not match the configured public key")
        self.cfg, self.index, self.keys = cfg, index, keys
        self.replica = Replica(cfg, index, keys)
        self.leader: Leader | None = None
        self.connect_timeout = connect_timeout
        self.ready = threading.Event()
        self._followers: list[RemoteFollower] = []
        self._stop = threading.Event()
        host, port = cfg.servers[index].host_port
        self._tcp = _TCPServer((host, port), _Handler, bind_and_activate=True)
        self._tcp.node = self

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def start(self):
        threading.Thread(target=self._tcp.serve_forever, daemon=True).start()
        if self.index == 0:
            self._connect_followers()
            self.leader = Leader(self.replica, self._followers)
            threading.Thread(target=self._ticker, daemon=True).start()
        self.ready.set()
        return self

    def _connect_followers(self):
        deadline = time.monotonic() + self.connect_timeout
        for i in range(1, self.cfg.l):
            while True:
                try:
                    self._followers.append(RemoteFollower(self.cfg, i, self.keys.box))
                    break
                except (ConnectionError, OSError):
                    if time.monotonic() > deadline:
                        raise
                    time.sleep(0.05)

    def _ticker(self):
        while not self._stop.wait(self.cfg.seal_interval / 2):
            try:
                self.leader.tick()
            except PirMsgError as exc:
                log.error("seal failed: %s", exc)

    def stop(self):
        self._stop.set()
        self._tcp.shutdown()
        self._tcp.server_close()
        for f in self._followers:
            f.close()
