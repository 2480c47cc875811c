"""Deployment parameters shared by every client and server of one cluster."""

from __future__ import annotations

import hashlib
import json
import math
import os
import socket
from dataclasses import dataclass, field, asdict

from . import crypto
from .errors import InvalidConfig

SLOT_OVERHEAD = 8 + crypto.TAG_BYTES + crypto.NONCE_BYTES  # seqNo + tag + nonce


def bloom_sizing(n_window: int, p: float) -> tuple[int, int]:
    """Bit width and hash count for ``n_window`` entries at false-positive rate ``p``."""
    if n_window < 1 or not 0 < p < 1:
        raise InvalidConfig("bloom sizing needs n_window >= 1 and 0 < p < 1")
    m_bits = math.ceil(-n_window * math.log(p) / math.log(2) ** 2)
    h = max(1, round(m_bits / n_window * math.log(2)))
    return m_bits, h


def buckets_for(n: int, d: int, load: float = 0.95) -> int:
    return math.ceil(n / (load * d))


@dataclass(frozen=True)
class ServerKeys:
    """Long-term key material of one server, derived from a 32-byte seed."""

    box: crypto.KeyPair
    signing: crypto.SigningPair

    @classmethod
    def from_seed(cls, seed: bytes) -> "ServerKeys":
        box_seed = hashlib.blake2b(seed, digest_size=32, person=b"x25519").digest()
        sig_seed = hashlib.blake2b(seed, digest_size=32, person=b"ed25519").digest()
        return cls(crypto.KeyPair.generate(box_seed), crypto.SigningPair.generate(sig_seed))

    @classmethod
    def generate(cls) -> "ServerKeys":
        return cls.from_seed(os.urandom(32))


@dataclass(frozen=True)
class ServerInfo:
    address: str
    public_key: bytes
    sign_key: bytes
    secret_seed: bytes | None = None  # only present in a server's own config

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.address.rpartition(":")
        return host, int(port)


@dataclass(frozen=True)
class Config:
    """Global parameters.

    ``w`` and ``r`` are per-client writes and reads per second. ``rotate_every``
    is the number of sequenced writes per notification window slot (roughly the
    number of writes the whole cluster sees in one write interval). With
    ``rotate_on_seal`` the window instead rotates at every sealed epoch that
    follows at least one write, and ``rotate_every`` is ignored.
    """

    n: int
    z: int
    l: int = 3
    d: int = 4
    b: int = 0
    w: float = 1.0
    r: float = 1.0
    bloom_p: float = 0.02
    window: int = 100
    bloom_window_entries: int = 0
    rotate_every: int = 1
    rotate_on_seal: bool = False
    seal_every: int = 64
    seal_interval: float = 0.05
    get_updates_every: int = 20
    keep_epochs: int = 16
    s_cuckoo: bytes = b"\x00" * 32
    servers: tuple[ServerInfo, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.b == 0:
            object.__setattr__(self, "b", buckets_for(self.n, self.d))
        if self.bloom_window_entries == 0:
            object.__setattr__(self, "bloom_window_entries", self.n)
        if self.l < 2:
            raise InvalidConfig("need at least two servers")
        if min(self.n, self.z, self.d, self.b) < 1:
            raise InvalidConfig("n, z, d, b must be positive")
        if self.n > self.b * self.d:
            raise InvalidConfig("n exceeds table capacity b*d")
        if self.z < 3 or self.z > 0x7FFF:
            raise InvalidConfig("z must lie in [3, 32767]")
        if len(self.s_cuckoo) != 32:
            raise InvalidConfig("s_cuckoo must be 32 bytes")
        if self.servers and len(self.servers) != self.l:
            raise InvalidConfig("server list length must equal l")

    @property
    def slot_size(self) -> int:
        return self.z + SLOT_OVERHEAD

    @property
    def bucket_len(self) -> int:
        return self.d * self.slot_size

    @property
    def query_bytes(self) -> int:
        return (self.b + 7) // 8

    @property
    def bloom(self) -> tuple[int, int]:
        return bloom_sizing(self.bloom_window_entries, self.bloom_p)

    @property
    def payload_capacity(self) -> int:
        """Usable message bytes per record (``z`` minus the length prefix)."""
        return self.z - 2

    def fingerprint(self) -> bytes:
        """Digest over the parameters every replica must agree on."""
        g = self.globals_dict()
        g.pop("servers")
        return hashlib.blake2b(json.dumps(g, sort_keys=True).encode(), digest_size=16).digest()

    def globals_dict(self) -> dict:
        d = asdict(self)
        d["s_cuckoo"] = self.s_cuckoo.hex()
        d["servers"] = [
            {k: (v.hex() if isinstance(v, bytes) else v) for k, v in s.items() if v is not None}
            for s in d["servers"]
        ]
        return d

    def public(self) -> "Config":
        """Copy without any server secret seeds."""
        servers = tuple(ServerInfo(s.address, s.public_key, s.sign_key) for s in self.servers)
        return self.replace(servers=servers)

    def replace(self, **kw) -> "Config":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return Config(**d)

    def to_json(self) -> str:
        return json.dumps(self.globals_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        d["s_cuckoo"] = bytes.fromhex(d.get("s_cuckoo", "00" * 32))
        servers = []
        for s in d.pop("servers", []):
            seed = bytes.fromhex(s["secret_seed"]) if s.get("secret_seed") else None
            if "public_key" in s:
                pk, sk = bytes.fromhex(s["public_key"]), bytes.fromhex(s["sign_key"])
            elif seed is not None:
                keys = ServerKeys.from_seed(seed)
                pk, sk = keys.box.public, keys.signing.public
            else:
                raise InvalidConfig("server entry needs public keys or a secret seed")
            servers.append(ServerInfo(s["address"], pk, sk, seed))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(servers=tuple(servers), **d)

    @classmethod
    def load(cls, path: str) -> "Config":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    """Ports the OS reports free right now (racy, but fine for local clusters)."""
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def dev_cluster_config(l: int = 3, base_port: int = 0, host: str = "127.0.0.1", **kw) -> Config:
    """Config with freshly generated server keys (seeds included) for local runs.

    With ``base_port=0`` free ports are picked so all addresses are concrete.
    """
    servers = []
    ports = [base_port + i for i in range(l)] if base_port else free_ports(l, host)
    for i in range(l):
        seed = os.urandom(32)
        keys = ServerKeys.from_seed(seed)
        port = ports[i]
        servers.append(ServerInfo(f"{host}:{port}", keys.box.public, keys.signing.public, seed))
    kw.setdefault("s_cuckoo", os.urandom(32))
    return Config(l=l, servers=tuple(servers), **kw)
