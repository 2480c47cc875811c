import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pirmsg import crypto
from pirmsg.errors import AuthFailure
from pirmsg.stats import chi2_uniform_pvalue, within_sigma
from oracles import prf_oracle, siphash24

KEY = bytes(range(16))


def test_siphash_reference_vector():
    assert siphash24(bytes(range(16)), bytes(range(15))) == 0xA129CA6149BE45E5
    assert crypto._siphash(bytes(range(16)), bytes(range(15))) == 0xA129CA6149BE45E5


def test_prf_modulus_one_is_zero():
    assert crypto.prf(KEY, 12345, 1) == 0


def test_prf_is_deterministic():
    assert crypto.prf(KEY, 77, 1000) == crypto.prf(KEY, 77, 1000)


@given(st.integers(0, 2**64 - 1), st.integers(1, 2**40))
@settings(max_examples=200)
def test_prf_matches_reference(value, modulus):
    assert crypto.prf(KEY, value, modulus) == prf_oracle(KEY, value, modulus)


def test_prf_rejection_path_matches_reference():
    # A modulus just over 2**63 rejects almost half of all outputs.
    m = 2**63 + 12345
    for v in range(50):
        assert crypto.prf(KEY, v, m) == prf_oracle(KEY, v, m)


def test_prf_buckets_uniform():
    counts = np.bincount([crypto.prf(KEY, x, 64) for x in range(10_000)], minlength=64)
    assert all(within_sigma(c, 10_000, 1 / 64) for c in counts)
    assert chi2_uniform_pvalue(counts) > 0.001


def test_prf_rejects_bad_key():
    with pytest.raises(ValueError):
        crypto.prf(b"short", 1, 10)


def test_prng_expand_empty_and_prefix():
    s = os.urandom(32)
    assert crypto.prng_expand(s, 0) == b""
    assert crypto.prng_expand(s, 128)[:64] == crypto.prng_expand(s, 64)


def test_prng_expand_distinct_seeds_hamming():
    a = np.frombuffer(crypto.prng_expand(b"\x01" * 32, 4096), np.uint8)
    b = np.frombuffer(crypto.prng_expand(b"\x02" * 32, 4096), np.uint8)
    dist = int(np.unpackbits(a ^ b).sum())
    bits = 4096 * 8
    assert abs(dist - bits / 2) <= 4 * (bits * 0.25) ** 0.5


def test_seal_roundtrip_zero_message():
    k, n = os.urandom(32), os.urandom(24)
    z = bytes(1024)
    ct = crypto.seal(k, n, z)
    assert len(ct) == len(z) + crypto.TAG_BYTES
    assert crypto.open(k, n, ct) == z


def test_seal_rejects_bit_flip_and_wrong_key():
    k, n = os.urandom(32), os.urandom(24)
    ct = bytearray(crypto.seal(k, n, b"hello"))
    ct[3] ^= 1
    with pytest.raises(AuthFailure):
        crypto.open(k, n, bytes(ct))
    with pytest.raises(AuthFailure):
        crypto.open(os.urandom(32), n, crypto.seal(k, n, b"hello"))


def test_seal_tamper_corpus_never_accepts():
    rng = np.random.default_rng(5)
    k, n = os.urandom(32), os.urandom(24)
    accepted = 0
    for i in range(10_000):
        pt = rng.bytes(int(rng.integers(0, 64)))
        ct = bytearray(crypto.seal(k, n, pt))
        bit = int(rng.integers(len(ct) * 8))
        ct[bit // 8] ^= 1 << (bit % 8)
        try:
            crypto.open(k, n, bytes(ct))
            accepted += 1
        except AuthFailure:
            pass
    assert accepted == 0


def test_pk_seal_roundtrip_cross_key_and_randomized():
    a, b = crypto.KeyPair.generate(), crypto.KeyPair.generate()
    c1 = crypto.pk_seal(a.public, b"query")
    c2 = crypto.pk_seal(a.public, b"query")
    assert len(c1) == 5 + crypto.PK_SEAL_OVERHEAD
    assert c1 != c2
    assert crypto.pk_open(a, c1) == b"query"
    with pytest.raises(AuthFailure):
        crypto.pk_open(b, c1)


def test_pk_seal_many_per_recipient():
    keys = [crypto.KeyPair.generate() for _ in range(3)]
    msgs = [b"q0", b"q1", b"q2"]
    eph, cts = crypto.pk_seal_many([k.public for k in keys], msgs)
    assert all(len(c) == 2 + crypto.TAG_BYTES for c in cts)
    for i, k in enumerate(keys):
        assert crypto.pk_open_many(k, eph, i, cts[i]) == msgs[i]
    with pytest.raises(AuthFailure):
        crypto.pk_open_many(keys[1], eph, 0, cts[0])
    with pytest.raises(AuthFailure):
        crypto.pk_open_many(keys[0], eph, 1, cts[0])


def test_bloom_positions_trivial_and_deterministic():
    assert crypto.bloom_positions(b"x", 1, 1) == [0]
    assert crypto.bloom_positions(b"abc", 5, 999) == crypto.bloom_positions(b"abc", 5, 999)


def test_bloom_positions_uniform():
    counts = np.zeros(4096, dtype=int)
    for i in range(10_000):
        for p in crypto.bloom_positions(i.to_bytes(8, "little"), 5, 4096):
            counts[p] += 1
    # With a mean of ~12 hits, a few of 4096 cells beyond 4 sigma is expected
    # (about 0.3 on average), so bound the number of excursions instead.
    outside = sum(not within_sigma(c, 50_000, 1 / 4096) for c in counts)
    assert outside <= 3
    assert chi2_uniform_pvalue(counts) > 0.001


def test_signatures():
    s, other = crypto.SigningPair.generate(), crypto.SigningPair.generate()
    sig = crypto.sign(s.secret, b"window")
    assert len(sig) == crypto.SIG_BYTES
    assert crypto.verify(s.public, b"window", sig)
    bad = bytearray(sig)
    bad[0] ^= 1
    assert not crypto.verify(s.public, b"window", bytes(bad))
    assert not crypto.verify(other.public, b"window", sig)


def test_drbg_is_reproducible_and_forks_diverge():
    a, b = crypto.Drbg(7), crypto.Drbg(7)
    assert a.randbytes(40) == b.randbytes(40)
    assert a.fork(b"x").randbytes(16) != a.fork(b"x").randbytes(16)
    assert all(0 <= a.randbelow(3) < 3 for _ in range(100))


def test_keypairs_from_seed_are_stable():
    seed = b"\x09" * 32
    assert crypto.KeyPair.generate(seed).public == crypto.KeyPair.generate(seed).public
    assert crypto.SigningPair.generate(seed).public == crypto.SigningPair.generate(seed).public
