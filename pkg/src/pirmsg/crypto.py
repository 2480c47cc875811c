"""Deterministic cryptographic primitives used by clients and servers.

Everything here is a pure function over byte strings. The symmetric and
public-key constructions come from libsodium (via PyNaCl): XSalsa20-Poly1305
for secret-key sealing, X25519 sealed boxes for public-key sealing, Ed25519
for signatures and SipHash-2-4 as the PRF.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import nacl.bindings as sodium
import nacl.exceptions

from .errors import AuthFailure

PRF_KEY_BYTES = 16
SYM_KEY_BYTES = 32
NONCE_BYTES = 24
TAG_BYTES = 16
PK_BYTES = 32
PK_SEAL_OVERHEAD = PK_BYTES + TAG_BYTES
SIG_BYTES = 64
SEED_BYTES = 32

_U64 = 1 << 64


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes

    @classmethod
    def generate(cls, seed: bytes | None = None) -> "KeyPair":
        """X25519 key pair, optionally derived from a 32-byte seed."""
        secret = seed if seed is not None else os.urandom(32)
        if len(secret) != 32:
            raise ValueError("key pair seed must be 32 bytes")
        return cls(sodium.crypto_scalarmult_base(secret), secret)


@dataclass(frozen=True)
class SigningPair:
    public: bytes
    secret: bytes

    @classmethod
    def generate(cls, seed: bytes | None = None) -> "SigningPair":
        seed = seed if seed is not None else os.urandom(32)
        pk, sk = sodium.crypto_sign_seed_keypair(seed)
        return cls(pk, sk)


def random_bytes(n: int) -> bytes:
    return os.urandom(n)


class Drbg:
    """Seeded deterministic byte source (SHAKE-256 over seed and a block counter).

    Used wherever tests or the security-game runner must pin client randomness.
    """

    def __init__(self, seed: bytes | int):
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "little", signed=False)
        self._seed = hashlib.blake2b(seed, digest_size=32, person=b"drbg").digest()
        self._ctr = 0

    def randbytes(self, n: int) -> bytes:
        out = hashlib.shake_256(self._seed + struct.pack("<Q", self._ctr)).digest(n)
        self._ctr += 1
        return out

    def randbelow(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be positive")
        limit = _U64 - (_U64 % n)
        while True:
            x = int.from_bytes(self.randbytes(8), "little")
            if x < limit:
                return x % n

    def fork(self, label: bytes) -> "Drbg":
        return Drbg(self.randbytes(16) + label)


_PACK_Q = struct.Struct("<Q").pack


def _siphash(key: bytes, msg: bytes) -> int:
    out = sodium.crypto_shorthash_siphash24(msg, key)
    return int.from_bytes(out, "little")


def prf(key: bytes, value: int, modulus: int) -> int:
    """Keyed PRF mapping a 64-bit input to ``[0, modulus)``.

    SipHash-2-4 output is reduced by rejection sampling, so the result carries
    no modulo bias. Retries append a 32-bit counter to the input.
    """
    if modulus < 1:
        raise ValueError("modulus must be positive")
    if len(key) != PRF_KEY_BYTES:
        raise ValueError("PRF key must be 16 bytes")
    if modulus == 1:
        return 0
    limit = _U64 - (_U64 % modulus)
    msg = struct.pack("<Q", value % _U64)
    x = _siphash(key, msg)
    ctr = 0
    while x >= limit:
        ctr += 1
        x = _siphash(key, msg + struct.pack("<I", ctr))
    return x % modulus


class PrfStream:
    """Counter-mode PRF draws, used where replicas must agree on randomness."""

    def __init__(self, seed: bytes):
        self._key = hashlib.blake2b(seed, digest_size=PRF_KEY_BYTES, person=b"prf-stream").digest()
        self.counter = 0

    def draw(self, modulus: int) -> int:
        # Inline fast path of prf(); falls back to it only when a retry is needed.
        ctr = self.counter
        self.counter += 1
        if modulus <= 1:
            return prf(self._key, ctr, modulus)
        x = _siphash(self._key, _PACK_Q(ctr % _U64))
        if x < _U64 - (_U64 % modulus):
            return x % modulus
        return prf(self._key, ctr, modulus)


def prng_expand(seed: bytes, length: int) -> bytes:
    """Expand a 32-byte seed into ``length`` pseudorandom bytes.

    The output for a shorter length is always a prefix of a longer one.
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    if length == 0:
        return b""
    return hashlib.shake_256(b"pirmsg-mask" + seed).digest(length)


def derive_nonce(key: bytes, *parts: bytes) -> bytes:
    return hashlib.blake2b(b"".join(parts), key=key, digest_size=NONCE_BYTES, person=b"nonce").digest()


def seal(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    """XSalsa20-Poly1305; output is ``len(plaintext) + 16`` bytes (nonce not included)."""
    return sodium.crypto_secretbox(plaintext, nonce, key)


def open(key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:  # noqa: A001
    try:
        return sodium.crypto_secretbox_open(ciphertext, nonce, key)
    except (nacl.exceptions.CryptoError, ValueError, TypeError) as exc:
        raise AuthFailure("secretbox open failed") from exc


def pk_seal(recipient_public: bytes, plaintext: bytes) -> bytes:
    """Anonymous sealed box: ephemeral public key | ciphertext | tag."""
    return sodium.crypto_box_seal(plaintext, recipient_public)


def pk_open(recipient: KeyPair, ciphertext: bytes) -> bytes:
    try:
        return sodium.crypto_box_seal_open(ciphertext, recipient.public, recipient.secret)
    except (nacl.exceptions.CryptoError, ValueError, TypeError) as exc:
        raise AuthFailure("sealed box open failed") from exc


def _multi_nonce(eph_public: bytes, index: int) -> bytes:
    return hashlib.blake2b(eph_public + struct.pack("<I", index), digest_size=NONCE_BYTES,
                           person=b"multi-seal").digest()


def pk_seal_many(publics: list[bytes], plaintexts: list[bytes],
                 eph_secret: bytes | None = None) -> tuple[bytes, list[bytes]]:
    """Seal one plaintext per recipient under a single ephemeral key.

    Returns the shared ephemeral public key and one ``len(p) + 16`` byte
    ciphertext per recipient. Recipient ``i`` opens with :func:`pk_open_many`.
    """
    if len(publics) != len(plaintexts):
        raise ValueError("one plaintext per recipient")
    eph = KeyPair.generate(eph_secret)
    out = []
    for i, (pk, pt) in enumerate(zip(publics, plaintexts)):
        shared = sodium.crypto_box_beforenm(pk, eph.secret)
        out.append(sodium.crypto_box_easy_afternm(pt, _multi_nonce(eph.public, i), shared))
    return eph.public, out


def pk_open_many(recipient: KeyPair, eph_public: bytes, index: int, ciphertext: bytes) -> bytes:
    try:
        shared = sodium.crypto_box_beforenm(eph_public, recipient.secret)
        return sodium.crypto_box_open_easy_afternm(ciphertext, _multi_nonce(eph_public, index), shared)
    except (nacl.exceptions.CryptoError, ValueError, TypeError) as exc:
        raise AuthFailure("multi-recipient open failed") from exc


def bloom_positions(item: bytes, h: int, m_bits: int) -> list[int]:
    """``h`` domain-separated BLAKE2b hashes of ``item``, each reduced to ``[0, m_bits)``.

    The 128-bit digest is reduced directly; bias per position is at most
    ``m_bits / 2**128``.
    """
    if h < 1 or m_bits < 1:
        raise ValueError("h and m_bits must be positive")
    out = []
    for i in range(h):
        d = hashlib.blake2b(item, digest_size=16, person=b"bloom" + struct.pack("<I", i)).digest()
        out.append(int.from_bytes(d, "little") % m_bits)
    return out


def sign(secret: bytes, message: bytes) -> bytes:
    return sodium.crypto_sign(message, secret)[:SIG_BYTES]


def verify(public: bytes, message: bytes, sig: bytes) -> bool:
    if len(sig) != SIG_BYTES:
        return False
    try:
        sodium.crypto_sign_open(sig + message, public)
    except (nacl.exceptions.BadSignatureError, nacl.exceptions.CryptoError, ValueError, TypeError):
        return False
    return True
