"""
Private reads with three servers, by hand
=========================================

A table of buckets is held by three servers. The reader wants bucket 5 and
must not reveal which one it wants to any two of them.
"""

import os

import numpy as np

from pirmsg import crypto, pir

# A toy table: 8 buckets of 16 bytes each.
rng = np.random.default_rng(0)
snap = pir.Snapshot.from_blocks([rng.bytes(16) for _ in range(8)])

# Split the unit vector for bucket 5 into three XOR shares.
queries = pir.gen_queries(5, 8, 3)
for i, q in enumerate(queries):
    print(f"server {i} sees {q.astype(int)}")
print("xor of all shares ", np.logical_xor.reduce(queries).astype(int))

# Each server XORs the buckets its share selects. Any single answer is noise.
answers = [pir.answer(snap, q) for q in queries]
print("bucket 5          ", snap.bucket(5).hex())
print("xor of answers    ", pir.reconstruct(answers).hex())

# On the wire every server masks its answer with a pad from a reader-chosen
# seed, so the leader combining them learns nothing either.
seeds = [os.urandom(crypto.SEED_BYTES) for _ in queries]
combined = pir.combine_masked([pir.mask_answer(a, s) for a, s in zip(answers, seeds)])
print("combined (masked) ", combined.hex())
print("unmasked          ", pir.unmask(combined, seeds).hex())
