import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pirmsg import crypto, pir
from pirmsg.errors import InvalidIndex, LengthMismatch
from pirmsg.stats import within_sigma
from oracles import xor_select


def rand_snapshot(b, width, seed=0):
    rng = np.random.default_rng(seed)
    return pir.Snapshot.from_blocks([rng.bytes(width) for _ in range(b)])


def test_gen_queries_defining_property_small():
    qs = pir.gen_queries(2, 3, 3, crypto.Drbg(1).randbytes)
    assert len(qs) == 3
    assert np.logical_xor.reduce(qs).tolist() == [False, False, True]


def test_gen_queries_fixed_example_b3_beta1():
    qs = pir.gen_queries(1, 3, 3, crypto.Drbg(2).randbytes)
    assert np.logical_xor.reduce(qs).tolist() == [False, True, False]


def test_two_server_queries_differ_by_unit_vector():
    for beta in range(5):
        q1, q2 = pir.gen_queries(beta, 5, 2)
        e = np.zeros(5, bool)
        e[beta] = True
        assert (q2 == (q1 ^ e)).all()


def test_gen_queries_errors():
    with pytest.raises(InvalidIndex):
        pir.gen_queries(3, 3, 3)
    with pytest.raises(InvalidIndex):
        pir.gen_queries(-1, 3, 3)
    with pytest.raises(ValueError):
        pir.gen_queries(0, 3, 1)


def test_query_bit_frequency():
    b, trials = 16, 10_000
    counts = np.zeros((3, b), dtype=int)
    for _ in range(trials):
        for i, q in enumerate(pir.gen_queries(5, b, 3)):
            counts[i] += q
    assert all(within_sigma(c, trials, 0.5) for c in counts.ravel())


@given(st.integers(1, 200).flatmap(lambda b: st.tuples(st.just(b), st.integers(0, b - 1))))
@settings(max_examples=60)
def test_query_encoding_roundtrip(arg):
    b, beta = arg
    for q in pir.gen_queries(beta, b, 3):
        assert (pir.decode_query(pir.encode_query(q), b) == q).all()


def test_answer_brute_force_example():
    snap = pir.Snapshot.from_blocks([b"\x0f", b"\xf0", b"\xaa"])
    assert pir.answer(snap, np.array([1, 0, 1], bool)) == b"\xa5"
    assert pir.answer(snap, np.zeros(3, bool)) == b"\x00"
    assert pir.answer(snap, np.array([0, 1, 0], bool)) == b"\xf0"


def test_reconstruct_worked_example():
    snap = pir.Snapshot.from_blocks([b"\x0f", b"\xf0", b"\xaa"])
    qs = [np.array(v, bool) for v in ([1, 0, 1], [0, 1, 1], [1, 0, 0])]
    answers = [pir.answer(snap, q) for q in qs]
    assert answers == [b"\xa5", b"\x5a", b"\x0f"]
    assert pir.reconstruct(answers) == b"\xf0"


def test_reconstruct_even_copies_cancel():
    assert pir.reconstruct([b"\x12\x34"] * 4) == b"\x00\x00"


def test_answer_length_mismatch():
    snap = rand_snapshot(4, 8)
    with pytest.raises(LengthMismatch):
        pir.answer(snap, np.zeros(5, bool))


@given(st.integers(1, 40), st.sampled_from([1, 3, 8, 24]), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_answer_matches_bytewise_oracle(b, width, seed):
    rng = np.random.default_rng(seed)
    blocks = [rng.bytes(width) for _ in range(b)]
    snap = pir.Snapshot.from_blocks(blocks)
    q = rng.integers(0, 2, b).astype(bool)
    assert pir.answer(snap, q) == xor_select(blocks, q)


def test_answer_batch_matches_single():
    snap = rand_snapshot(300, 16, 3)
    qs = [pir.gen_queries(7, 300, 3)[0] for _ in range(4)]
    assert pir.answer_batch(snap, qs) == [pir.answer(snap, q) for q in qs]


def test_full_pipeline_every_bucket():
    snap = rand_snapshot(64, 24, 9)
    for beta in range(64):
        qs = pir.gen_queries(beta, 64, 3)
        assert pir.reconstruct([pir.answer(snap, q) for q in qs]) == snap.bucket(beta)


def test_masking_properties():
    a, seed = os.urandom(40), os.urandom(32)
    once = pir.mask_answer(a, seed)
    assert len(once) == len(a)
    assert pir.mask_answer(once, seed) == a
    assert pir.mask_answer(bytes(40), seed) == crypto.prng_expand(seed, 40)


def test_combine_masked_basics():
    blocks = [os.urandom(8) for _ in range(3)]
    assert pir.combine_masked(blocks[:1]) == blocks[0]
    assert pir.combine_masked(blocks) == pir.combine_masked(blocks[::-1])


def test_serialized_equals_plain_every_bucket():
    snap = rand_snapshot(64, 32, 11)
    for beta in range(64):
        qs = pir.gen_queries(beta, 64, 3)
        seeds = [os.urandom(32) for _ in qs]
        plain = pir.reconstruct([pir.answer(snap, q) for q in qs])
        masked = [pir.mask_answer(pir.answer(snap, q), s) for q, s in zip(qs, seeds)]
        assert pir.unmask(pir.combine_masked(masked), seeds) == plain == snap.bucket(beta)


def test_unmask_identity_with_zero_mask_and_wrong_seed():
    snap = rand_snapshot(8, 16, 1)
    qs = pir.gen_queries(3, 8, 3)
    seeds = [os.urandom(32) for _ in qs]
    masked = [pir.mask_answer(pir.answer(snap, q), s) for q, s in zip(qs, seeds)]
    combined = pir.combine_masked(masked)
    assert pir.unmask(combined, seeds) == snap.bucket(3)
    seeds[1] = os.urandom(32)
    assert pir.unmask(combined, seeds) != snap.bucket(3)
    assert pir.xor_blocks([combined]) == combined


def test_snapshot_is_read_only_and_indexed():
    snap = rand_snapshot(4, 8)
    with pytest.raises(ValueError):
        snap.buckets[0, 0] = 1
    with pytest.raises(InvalidIndex):
        snap.bucket(4)
    assert snap.bucket_count == 4 and snap.bucket_len == 8
