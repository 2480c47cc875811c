import socket
import threading

import pytest
from hypothesis import given, settings, strategies as st

from pirmsg import crypto, logproto, notify, paramtool, transport
from pirmsg.client import Client
from pirmsg.config import Config, dev_cluster_config
from pirmsg.errors import AuthFailure, DecodeError, HandshakeError
from pirmsg.transport import Frame, Kind, ReadRequest, SeqOp, Status, UpdatesReply

CFG = dev_cluster_config(3, n=256, z=64)


@given(st.sampled_from(list(Kind)), st.binary(max_size=200))
def test_frame_round_trip(kind, payload):
    enc = Frame(kind, payload).encode()
    assert len(enc) == len(payload) + 5
    assert transport.decode_frame(enc) == Frame(kind, payload)


def test_frame_errors():
    enc = Frame(Kind.READ, b"abc").encode()
    with pytest.raises(DecodeError):
        transport.decode_frame(enc[:-1])
    with pytest.raises(DecodeError):
        transport.decode_frame(enc[:3])
    with pytest.raises(DecodeError):
        transport.decode_frame(b"\x00\x00\x00\x00\x55")


def test_write_round_trip_and_constant_length():
    h = logproto.gen_handle()
    params = transport.bloom_params(CFG)
    iv = notify.make_interest(h.id, 0, params).positions
    real = logproto.real_write(h, 0, b"x", CFG.b, CFG.z, iv)
    fake = logproto.fake_write(CFG.b, CFG.z, notify.make_fake_interest(params).positions)
    er, ef = transport.encode_write(real, CFG), transport.encode_write(fake, CFG)
    assert len(er) == len(ef) == transport.write_len(CFG)
    assert transport.decode_write(er, CFG) == real
    with pytest.raises(DecodeError):
        transport.decode_write(er[:-1], CFG)


def _read_request(cfg):
    req, _ = Client(cfg, None, seed=b"\x01" * 32).build_read(3)
    return req


def test_read_round_trip_and_blob_count():
    req = _read_request(CFG)
    enc = transport.encode_read(req, CFG)
    assert len(enc) == transport.read_len(CFG)
    assert transport.decode_read(enc, CFG) == req
    with pytest.raises(DecodeError):
        transport.decode_read(enc[:-transport.blob_len(CFG)], CFG)
    with pytest.raises(ValueError):
        transport.encode_read(ReadRequest(req.epoch, req.eph_public, req.blobs[:2]), CFG)


def test_read_request_size_vs_reference():
    cfg = Config(n=10_000, z=1024)
    size = paramtool.FRAME_HEADER + transport.read_len(cfg)
    assert abs(size / 1024 - 0.96) / 0.96 <= 0.25


def test_small_payloads():
    assert transport.decode_get_updates(transport.encode_get_updates(None)) is None
    assert transport.decode_get_updates(transport.encode_get_updates(12)) == 12
    assert transport.decode_write_ack(transport.encode_write_ack(4, Status.RATE_LIMITED)) == (4, Status.RATE_LIMITED, b"")
    assert transport.decode_block_reply(transport.encode_block_reply(9, b"ab"), 2) == (9, b"ab")
    with pytest.raises(DecodeError):
        transport.decode_block_reply(transport.encode_block_reply(9, b"ab"), 3)
    assert transport.decode_sequenced(transport.encode_sequenced(5, SeqOp.SEAL)) == (5, SeqOp.SEAL, b"")
    assert transport.decode_error(transport.encode_error(3, "nope")) == (3, "nope")


def test_updates_round_trip():
    rep = UpdatesReply(7, ((7, b"\x01\x02"), (8, b"")), (b"\x00" * 64, b"\x01" * 64, b"\x02" * 64))
    corr, got = transport.decode_updates(transport.encode_updates(2, rep))
    assert corr == 2 and got == rep
    with pytest.raises(DecodeError):
        transport.decode_updates(transport.encode_updates(2, rep)[:-10])


def _pair():
    server = crypto.KeyPair.generate()
    client = crypto.KeyPair.generate()
    hs = transport.ClientHandshake(client, server.public)
    confirm, s_cipher = transport.server_handshake(server, hs.hello())
    return hs.finish(confirm), s_cipher, server, client


def test_handshake_and_session():
    c, s, server, client = _pair()
    assert c.session_id == s.session_id
    assert s.peer_static == client.public and c.peer_static == server.public
    for i in range(3):
        assert s.open(c.seal(b"frame%d" % i)) == b"frame%d" % i
        assert c.open(s.seal(b"reply")) == b"reply"


def test_handshake_wrong_server_key():
    server, impostor = crypto.KeyPair.generate(), crypto.KeyPair.generate()
    hs = transport.ClientHandshake(crypto.KeyPair.generate(), server.public)
    confirm, _ = transport.server_handshake(impostor, hs.hello())
    with pytest.raises(HandshakeError):
        hs.finish(confirm)
    with pytest.raises(HandshakeError):
        transport.server_handshake(server, b"short")


def test_tamper_and_replay_rejected():
    c, s, _, _ = _pair()
    ct = bytearray(c.seal(b"hello"))
    ct[3] ^= 1
    with pytest.raises(AuthFailure):
        s.open(bytes(ct))
    c2, s2, _, _ = _pair()
    first = c2.seal(b"one")
    assert s2.open(first) == b"one"
    with pytest.raises(AuthFailure):
        s2.open(first)


@settings(max_examples=20, deadline=None)
@given(st.binary(max_size=64))
def test_tamper_any_byte(payload):
    c, s, _, _ = _pair()
    ct = c.seal(payload)
    for i in range(0, len(ct), max(1, len(ct) // 8)):
        bad = bytearray(ct)
        bad[i] ^= 0x80
        s.recv_ctr = 1
        with pytest.raises(AuthFailure):
            s.open(bytes(bad))


def test_socket_round_trip():
    server = crypto.KeyPair.generate()
    lsock = socket.create_server(("127.0.0.1", 0))
    got = {}

    def serve():
        conn, _ = lsock.accept()
        with conn:
            cipher = transport.accept(conn, server)
            frame = transport.recv_sealed(conn, cipher)
            transport.send_sealed(conn, cipher, Frame(Kind.WRITE_ACK, frame.payload[::-1]))
            got["sid"] = cipher.session_id

    t = threading.Thread(target=serve)
    t.start()
    sock, cipher = transport.connect(lsock.getsockname(), crypto.KeyPair.generate(), server.public)
    with sock:
        transport.send_sealed(sock, cipher, Frame(Kind.WRITE, b"abc"))
        assert transport.recv_sealed(sock, cipher) == Frame(Kind.WRITE_ACK, b"cba")
    t.join(5)
    lsock.close()
    assert got["sid"] == cipher.session_id
