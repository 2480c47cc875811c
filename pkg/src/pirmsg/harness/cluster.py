"""Launch a networked cluster on localhost, as threads or as separate processes."""

from __future__ import annotations

import json
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..config import Config
from ..errors import PirMsgError
from ..node import RemoteError, ServerNode


class StartupRefused(PirMsgError):
    """A follower rejected the leader, e.g. because their configs disagree."""


@dataclass
class RunningCluster:
    cfg: Config
    nodes: list[ServerNode] = field(default_factory=list)
    procs: list[subprocess.Popen] = field(default_factory=list)
    workdir: Path | None = None

    @property
    def leader_address(self) -> tuple[str, int]:
        return self.cfg.servers[0].host_port

    def stop(self):
        for n in reversed(self.nodes):
            n.stop()
        for p in self.procs:
            p.terminate()
        for p in self.procs:
            try:
                p.wait(timeout=5)
            except subprocess.TimeoutExpired:
                p.kill()
        self.nodes.clear()
        self.procs.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def run_cluster(cfg: Config | list[Config], processes: bool = False, timeout: float = 10.0) -> RunningCluster:
    """Start every server and return once the leader has reached all followers.

    Args:
        cfg: one config shared by all servers, or one per server (index ``i``
            gets ``cfg[i]``). Server 0 is the leader.
        processes: run each server as ``python -m pirmsg server`` instead of a thread.
        timeout: seconds to wait for readiness.

    Raises:
        StartupRefused: a follower's globals (for example ``s_cuckoo``) differ from the leader's.
    """
    cfgs = list(cfg) if isinstance(cfg, (list, tuple)) else [cfg] * cfg.l
    if len(cfgs) != cfgs[0].l:
        raise ValueError("need one config per server")
    if processes:
        return _run_processes(cfgs, timeout)
    running = RunningCluster(cfgs[0])
    try:
        for i in range(len(cfgs) - 1, -1, -1):
            node = ServerNode(cfgs[i], i, connect_timeout=timeout)
            running.nodes.insert(0, node)
            if i:
                node.start()
        running.nodes[0].start()
    except RemoteError as exc:
        running.stop()
        raise StartupRefused(str(exc)) from exc
    except BaseException:
        running.stop()
        raise
    return running


def _run_processes(cfgs: list[Config], timeout: float) -> RunningCluster:
    workdir = Path(tempfile.mkdtemp(prefix="pirmsg-cluster-"))
    running = RunningCluster(cfgs[0], workdir=workdir)
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    for i in range(len(cfgs) - 1, -1, -1):
        path = workdir / f"server{i}.json"
        path.write_text(cfgs[i].to_json())
        role = "leader" if i == 0 else "follower"
        running.procs.append(subprocess.Popen(
            [sys.executable, "-m", "pirmsg", "server", "--config", str(path), "--role", role, "--index", str(i)],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True, env=env))
    leader = running.procs[-1]
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        line = leader.stdout.readline()
        if not line:
            break
        try:
            msg = json.loads(line)
        except ValueError:
            continue
        if msg.get("status") == "ready":
            return running
        if msg.get("status") == "refused":
            running.stop()
            raise StartupRefused(msg.get("error", "follower refused"))
    running.stop()
    raise StartupRefused("leader did not become ready")
