"""Deployment planning: message lifetime, table load and per-client bandwidth.

Wire sizes are computed from :mod:`pirmsg.transport`'s layout functions, so the
numbers here match what clients actually send.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from . import crypto
from . import transport as tp
from .config import Config, buckets_for
from .cuckoo import RECOMMENDED_LOAD
from .notify import varint_len

FRAME_HEADER = 5
KIB = 1024


@dataclass(frozen=True)
class DeploymentParams:
    """Globally configured sizes plus the measured client population.

    Attributes:
        l: number of servers.
        n: messages stored.
        b: buckets.
        d: slots per bucket.
        z: message size in bytes.
        w: writes per second per online user.
        r: reads per second per online user.
        m: online users (an average, so fractional values are allowed).
    """

    l: int
    n: int
    b: int
    d: int
    z: int
    w: float
    r: float
    m: float = 1

    def __post_init__(self):
        for name in ("l", "n", "b", "d", "z", "w", "r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.m < 0:
            raise ValueError("m must be non-negative")

    @classmethod
    def from_config(cls, cfg: Config, m: float = 1) -> "DeploymentParams":
        return cls(cfg.l, cfg.n, cfg.b, cfg.d, cfg.z, cfg.w, cfg.r, m)

    @classmethod
    def for_capacity(cls, n: int, z: int = 1024, l: int = 3, d: int = 4, w: float = 1.0,
                     r: float = 1.0, m: float = 1) -> "DeploymentParams":
        """Size ``b`` for the recommended load factor."""
        return cls(l, n, buckets_for(n, d, RECOMMENDED_LOAD), d, z, w, r, m)

    def to_config(self) -> Config:
        return Config(n=self.n, z=self.z, l=self.l, d=self.d, b=self.b, w=self.w, r=self.r)


def ttl(p: DeploymentParams) -> float:
    """Seconds before a message is expired: n / (m·w)."""
    if p.m <= 0:
        raise ValueError("ttl needs at least one online user")
    return p.n / (p.m * p.w)


def users_for_ttl(n: int, w: float, seconds: float) -> float:
    """Online population that gives a message lifetime of ``seconds``."""
    return n / (w * seconds)


def load(p: DeploymentParams) -> float:
    """Fraction of table slots in use once full. Warns above the recommended 0.95."""
    f = p.n / (p.b * p.d)
    if f > RECOMMENDED_LOAD + 1e-12:
        warnings.warn(f"load factor {f:.3f} exceeds {RECOMMENDED_LOAD}; inserts may overflow",
                      RuntimeWarning, stacklevel=2)
    return f


def read_request_bytes(p: DeploymentParams) -> int:
    """One READ frame: header, epoch, ephemeral key and l sealed query blobs."""
    return FRAME_HEADER + tp.read_len(p.to_config())


def read_response_bytes(p: DeploymentParams) -> int:
    return FRAME_HEADER + 4 + p.to_config().bucket_len


def write_request_bytes(p: DeploymentParams) -> int:
    return FRAME_HEADER + tp.write_len(p.to_config())


def write_ack_bytes() -> int:
    return FRAME_HEADER + 5


def get_updates_request_bytes() -> int:
    return FRAME_HEADER + 8


def updates_reply_estimate(p: DeploymentParams, get_updates_every: int = 20) -> float:
    """Expected UPDATES_REPLY size when writes rotate the window once per m writes.

    Between two polls the population writes ``m·w·get_updates_every/r``
    messages; each contributes ``h`` positions encoded as varint gaps.
    """
    cfg = p.to_config()
    m_bits, h = cfg.bloom
    fixed = FRAME_HEADER + 4 + 8 + 2 + 1 + p.l * crypto.SIG_BYTES
    writes = p.m * p.w * get_updates_every / p.r
    rotations = max(1.0, writes / max(1, p.m))
    entries = min(writes * h, m_bits)
    gap = m_bits / max(entries, 1.0)
    per_delta = 12 + varint_len(int(entries / rotations))
    return fixed + rotations * per_delta + entries * varint_len(max(1, int(gap)))


def daily_client_bytes(p: DeploymentParams, read_interval: float | None = None,
                       write_interval: float | None = None, updates_reply_bytes: float | None = None,
                       get_updates_every: int = 20, online_fraction: float = 1.0) -> float:
    """Bytes one client sends plus receives per day.

    Args:
        p: deployment parameters.
        read_interval: seconds between reads (defaults to 1/r).
        write_interval: seconds between writes (defaults to 1/w).
        updates_reply_bytes: observed mean UPDATES_REPLY frame size; estimated if omitted.
        get_updates_every: reads between GetUpdates polls.
        online_fraction: share of the day the client is online and ticking.
    """
    read_interval = read_interval or 1 / p.r
    write_interval = write_interval or 1 / p.w
    seconds = 86400 * online_fraction
    reads = seconds / read_interval
    writes = seconds / write_interval
    if updates_reply_bytes is None:
        updates_reply_bytes = updates_reply_estimate(p, get_updates_every)
    per_read = read_request_bytes(p) + read_response_bytes(p)
    per_write = write_request_bytes(p) + write_ack_bytes()
    polls = reads / get_updates_every if get_updates_every else 0.0
    return reads * per_read + writes * per_write + polls * (get_updates_request_bytes() + updates_reply_bytes)


def table(p: DeploymentParams, read_interval: float | None = None) -> dict:
    """Derived quantities as a flat dict (sizes in bytes)."""
    out = {
        "l": p.l, "n": p.n, "b": p.b, "d": p.d, "z": p.z, "w": p.w, "r": p.r, "m": p.m,
        "load": p.n / (p.b * p.d),
        "read_request_bytes": read_request_bytes(p),
        "read_response_bytes": read_response_bytes(p),
        "write_request_bytes": write_request_bytes(p),
        "daily_client_bytes": daily_client_bytes(p, read_interval),
    }
    if p.m > 0:
        out["ttl_seconds"] = ttl(p)
    return out


def format_table(rows: dict) -> str:
    width = max(len(k) for k in rows)
    lines = []
    for k, v in rows.items():
        if isinstance(v, float):
            v = f"{v:,.4g}" if abs(v) < 1e6 else f"{v:,.0f}"
        elif isinstance(v, int):
            v = f"{v:,}"
        lines.append(f"{k:<{width}}  {v}")
    return "\n".join(lines)


def kib(nbytes: float) -> float:
    return nbytes / KIB


__all__ = [
    "DeploymentParams", "ttl", "users_for_ttl", "load", "read_request_bytes", "read_response_bytes",
    "write_request_bytes", "write_ack_bytes", "get_updates_request_bytes", "updates_reply_estimate",
    "daily_client_bytes", "table", "format_table", "kib",
]
