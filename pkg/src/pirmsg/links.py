"""Client-to-leader links. Both variants speak encoded frames, so a tap sees wire bytes."""

from __future__ import annotations

from typing import Callable

from . import transport as tp
from .config import Config
from .errors import EpochUnavailable, PirMsgError
from .transport import Frame, Kind, Status

Tap = Callable[[str, Frame], None]


class LinkError(PirMsgError):
    pass


class Link:
    def __init__(self, cfg: Config, tap: Tap | None = None):
        self.cfg = cfg
        self.tap = tap
        self.corr = 0

    def _exchange(self, frame: Frame) -> Frame:
        raise NotImplementedError

    def _call(self, frame: Frame, expect: Kind) -> Frame:
        if self.tap:
            self.tap("out", frame)
        reply = self._exchange(frame)
        if self.tap:
            self.tap("in", reply)
        self.corr += 1
        if reply.kind == Kind.ERROR:
            code, msg = tp.decode_error(reply.payload)
            if code == 3:
                raise EpochUnavailable(msg)
            raise LinkError(msg)
        if reply.kind != expect:
            raise LinkError(f"expected {expect.name}, got {reply.kind.name}")
        return reply

    def write(self, w) -> Status:
        reply = self._call(Frame(Kind.WRITE, tp.encode_write(w, self.cfg)), Kind.WRITE_ACK)
        return tp.decode_write_ack(reply.payload)[1]

    def read(self, req: tp.ReadRequest) -> bytes:
        reply = self._call(Frame(Kind.READ, tp.encode_read(req, self.cfg)), Kind.READ_REPLY)
        return tp.decode_block_reply(reply.payload, self.cfg.bucket_len)[1]

    def get_updates(self, since_epoch: int | None) -> tp.UpdatesReply:
        reply = self._call(Frame(Kind.GET_UPDATES, tp.encode_get_updates(since_epoch)), Kind.UPDATES_REPLY)
        return tp.decode_updates(reply.payload)[1]

    def close(self):
        pass


class LocalLink(Link):
    """In-process link: frames are encoded, served by the leader front end, and decoded."""

    def __init__(self, cfg: Config, leader, client_id: bytes, tap: Tap | None = None):
        super().__init__(cfg, tap)
        self.leader = leader
        self.client_id = client_id

    def _exchange(self, frame: Frame) -> Frame:
        from .node import handle_client_frame

        wire = frame.encode()
        return tp.decode_frame(handle_client_frame(self.leader, self.cfg, tp.decode_frame(wire),
                                                   self.corr, self.client_id).encode())


class NetworkLink(Link):
    """Encrypted TCP session to the leader."""

    def __init__(self, cfg: Config, static, tap: Tap | None = None, timeout: float = 30.0):
        super().__init__(cfg, tap)
        leader = cfg.servers[0]
        self.sock, self.cipher = tp.connect(leader.host_port, static, leader.public_key, timeout=timeout)

    def _exchange(self, frame: Frame) -> Frame:
        tp.send_sealed(self.sock, self.cipher, frame)
        return tp.recv_sealed(self.sock, self.cipher)

    def close(self):
        self.sock.close()
