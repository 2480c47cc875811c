import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pirmsg import crypto, notify
from pirmsg.config import bloom_sizing
from pirmsg.errors import DecodeError

P = notify.BloomParams(*bloom_sizing(2000, 0.02))


def ids(k, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.bytes(16) for _ in range(k)]


def test_sizing_formula():
    m, h = bloom_sizing(1_000_000, 0.02)
    assert m == 8_142_364 and h == 6
    assert P == notify.BloomParams(16_285, 6)


def test_interest_vectors():
    iv = notify.make_interest(b"\x01" * 16, 3, P)
    fake = notify.make_fake_interest(P)
    assert len(iv.positions) <= P.h and len(fake.positions) <= P.h
    assert iv.bits().shape == fake.bits().shape == (P.m_bits,)
    g = notify.GlobalInterestVector(P, 100)
    g.absorb(iv)
    assert g.check(b"\x01" * 16, 3)


def test_interest_encoding_fixed_length():
    lens = {len(notify.encode_interest(notify.make_interest(os.urandom(16), i, P))) for i in range(200)}
    lens |= {len(notify.encode_interest(notify.make_fake_interest(P))) for _ in range(200)}
    assert lens == {P.wire_cap}
    iv = notify.make_interest(b"\x02" * 16, 9, P)
    assert notify.decode_interest(notify.encode_interest(iv), P) == iv


def test_absorb_idempotent_and_monotone():
    g = notify.GlobalInterestVector(P, 100)
    assert not g.check(b"\x00" * 16, 0)
    counts = []
    for i, lid in enumerate(ids(50)):
        g.absorb(notify.make_interest(lid, i, P))
        counts.append(int(g.effective().sum()))
    before = g.effective().copy()
    g.absorb(notify.make_interest(ids(1)[0], 0, P))
    assert (g.effective() == before).all()
    assert counts == sorted(counts)


def test_rotation_window():
    g = notify.GlobalInterestVector(P, 3)
    g.rotate()
    assert not g.effective().any()
    lid = b"\x07" * 16
    g.absorb(notify.make_interest(lid, 1, P))
    assert g.check(lid, 1) and not g.check(lid, 1, published_only=True)
    g.rotate()
    assert g.check(lid, 1, published_only=True)
    for _ in range(2):
        g.rotate()
        assert g.check(lid, 1)
    g.rotate()
    assert not g.check(lid, 1)
    assert len(g.deltas) == 3


def test_check_since_epoch_and_first_epoch():
    g = notify.GlobalInterestVector(P, 10)
    lid = b"\x09" * 16
    g.rotate()  # epoch 0: empty
    g.absorb(notify.make_interest(lid, 4, P))
    g.rotate()  # epoch 1 holds the item
    g.rotate()  # epoch 2: empty
    assert g.first_epoch(lid, 4) == 1
    assert g.check(lid, 4, since_epoch=0)
    assert not g.check(lid, 4, since_epoch=1)
    assert g.first_epoch(lid, 5) is None
    g.absorb(notify.make_interest(lid, 4, P))
    assert g.check(lid, 4, since_epoch=2)
    assert not g.check(lid, 4, published_only=True, since_epoch=2)


def test_no_false_negatives_and_fpr():
    g = notify.GlobalInterestVector(P, 100)
    members = ids(2000)
    for j, lid in enumerate(members):
        g.absorb(notify.make_interest(lid, j, P))
        if j % 20 == 19:
            g.rotate()
    assert all(g.check(lid, j) for j, lid in enumerate(members))
    fp = sum(g.check(lid, 0) for lid in ids(10_000, seed=1))
    assert 0.01 <= fp / 10_000 <= 0.04


@given(st.sets(st.integers(0, 16_284), max_size=300))
@settings(max_examples=100)
def test_delta_round_trip(positions):
    delta = np.zeros(P.m_bits, dtype=bool)
    delta[list(positions)] = True
    assert (notify.giv_decode_delta(notify.giv_encode_delta(delta), P.m_bits) == delta).all()


def test_delta_sizes():
    assert len(notify.giv_encode_delta(np.zeros(P.m_bits, dtype=bool))) <= 8
    g = notify.GlobalInterestVector(P, 100)
    for j, lid in enumerate(ids(2000)):
        g.absorb(notify.make_interest(lid, j, P))
    assert len(notify.giv_encode_delta(g.open)) < 10_000


def test_decode_rejects_garbage():
    with pytest.raises(DecodeError):
        notify.giv_decode_delta(b"\x05\x01", P.m_bits)
    with pytest.raises(DecodeError):
        notify.giv_decode_delta(b"\x01\xff\xff\xff\x7f", P.m_bits)


def test_varint_len():
    assert [notify.varint_len(v) for v in (0, 127, 128, 2**14)] == [1, 1, 2, 3]


def test_signatures():
    pairs = [crypto.SigningPair.generate(bytes([i]) * 32) for i in range(3)]
    pubs = [p.public for p in pairs]
    g = notify.GlobalInterestVector(P, 10)
    g.absorb(notify.make_interest(b"\x01" * 16, 0, P))
    g.rotate()
    sigs = [notify.giv_sign(p, g) for p in pairs]
    assert notify.giv_verify(pubs, g, sigs)
    assert not notify.giv_verify(pubs, g, sigs[:2])
    assert not notify.giv_verify(pubs, g, {0: sigs[0], 1: sigs[1]})
    assert not notify.giv_verify(pubs[::-1], g, sigs)
    wire = g.encoded_deltas()
    wire[-1] = (wire[-1][0], notify.encode_positions([1, 2, 3]))
    tampered = notify.GlobalInterestVector(P, 10)
    tampered.apply_update(g.window_epoch, wire)
    assert not notify.giv_verify(pubs, tampered, sigs)


def test_client_sync_matches_server():
    server = notify.GlobalInterestVector(P, 5)
    client = notify.GlobalInterestVector(P, 5)
    for r in range(12):
        server.absorb(notify.make_interest(bytes([r]) * 16, r, P))
        server.rotate()
        if r % 3 == 2:
            client.apply_update(server.window_epoch, server.encoded_deltas(client.latest_epoch()))
            assert client.digest() == server.digest()
    client2 = notify.GlobalInterestVector(P, 5)
    client2.apply_update(server.window_epoch, server.encoded_deltas(None))
    assert client2.digest() == server.digest()
    assert len(server.encoded_deltas(server.latest_epoch() - 1)) == 1
