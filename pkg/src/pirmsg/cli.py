"""Command line entry points.

Subcommands: ``server``, ``replay``, ``game``, ``compare``, ``bench-pir``,
``params`` and ``dev-config`` (writes a local three-server config with keys).
Reports go to stdout as JSON, followed by a readable table unless ``--json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import paramtool
from .config import Config, dev_cluster_config
from .errors import PirMsgError


def _load(path: str) -> Config:
    return Config.load(path)


def cmd_server(args) -> int:
    from .node import RemoteError, ServerNode

    cfg = _load(args.config)
    if (args.role == "leader") != (args.index == 0):
        print(json.dumps({"status": "error", "error": "the leader is index 0"}), flush=True)
        return 2
    node = ServerNode(cfg, args.index, connect_timeout=args.connect_timeout)
    try:
        node.start()
    except (RemoteError, OSError) as exc:
        print(json.dumps({"status": "refused", "error": str(exc)}), flush=True)
        node.stop()
        return 1
    host, port = node.address
    print(json.dumps({"status": "ready", "role": args.role, "index": args.index, "address": f"{host}:{port}"}),
          flush=True)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    node.stop()
    return 0


def cmd_replay(args) -> int:
    from .harness.workload import generate_chat, parse_chat_log, replay_workload

    cfg = _load(args.config)
    if args.log:
        with open(args.log, encoding="utf-8") as f:
            chat = parse_chat_log(f)
    else:
        chat = generate_chat(args.synthetic, users=args.users, channels=args.channels, seed=args.seed)
    rep = replay_workload(chat, cfg, read_interval=args.read_interval, write_interval=args.write_interval,
                          time_scale=args.time_scale, get_updates_every=args.get_updates_every, seed=args.seed)
    out = rep.to_dict()
    print(json.dumps(out, indent=None if args.json else 2))
    if not args.json:
        print(paramtool.format_table({k: v for k, v in out.items()}), file=sys.stderr)
    return 0


def cmd_game(args) -> int:
    from .harness.game import GameScript, game_config, run_game

    script = GameScript.load(args.script)
    cfg = _load(args.config) if args.config else game_config(script.m)
    res = run_game(script, args.bit, cfg, seed=args.seed)
    if args.out:
        res.dump(args.out)
    else:
        for t in res.traces:
            print(json.dumps(t.__dict__))
    print(json.dumps({"bit": args.bit, "frames": len(res.traces), "refused_rounds": res.refused,
                      "delivered": len(res.delivered)}), file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    from .harness.game import compare_traces, format_verdict, load_traces

    v = compare_traces(load_traces(args.t0), load_traces(args.t1))
    print(json.dumps(v.to_dict()))
    if not args.json:
        print(format_verdict(v), file=sys.stderr)
    return 0 if v.shape_equal else 1


def cmd_bench(args) -> int:
    from .harness.bench import bench_pir, format_bench

    rows = [bench_pir(n, z=args.z, reads=args.reads) for n in args.n]
    print(json.dumps(rows))
    if not args.json:
        print(format_bench(rows), file=sys.stderr)
    return 0


def cmd_params(args) -> int:
    cfg = _load(args.config)
    p = paramtool.DeploymentParams.from_config(cfg, args.m)
    rows = paramtool.table(p, args.read_interval)
    print(json.dumps(rows))
    if not args.json:
        print(paramtool.format_table(rows), file=sys.stderr)
    return 0


def cmd_dev_config(args) -> int:
    cfg = dev_cluster_config(args.l, base_port=args.base_port, n=args.n, z=args.z)
    Path(args.out).write_text(cfg.to_json())
    print(json.dumps({"written": args.out, "servers": [s.address for s in cfg.servers]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pirmsg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("server", help="run one server")
    s.add_argument("--config", required=True)
    s.add_argument("--role", choices=("leader", "follower"), required=True)
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--connect-timeout", type=float, default=10.0)
    s.set_defaults(func=cmd_server)

    s = sub.add_parser("replay", help="replay a chat log on simulated clients")
    s.add_argument("--config", required=True)
    s.add_argument("--log", help="chat log (ISO8601<TAB>channel<TAB>sender<TAB>text)")
    s.add_argument("--synthetic", type=int, default=200, help="messages to generate when --log is absent")
    s.add_argument("--users", type=int, default=8)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--read-interval", type=float, default=1.0)
    s.add_argument("--write-interval", type=float, default=None)
    s.add_argument("--get-updates-every", type=int, default=None)
    s.add_argument("--time-scale", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("game", help="play an access-sequence game script")
    s.add_argument("--config")
    s.add_argument("--script", required=True)
    s.add_argument("--bit", type=int, choices=(0, 1), required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", help="write trace JSON lines here instead of stdout")
    s.set_defaults(func=cmd_game)

    s = sub.add_parser("compare", help="compare two game traces")
    s.add_argument("t0")
    s.add_argument("t1")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("bench-pir", help="time server read processing")
    s.add_argument("--n", type=int, nargs="+", default=[10_000, 100_000])
    s.add_argument("--z", type=int, default=1024)
    s.add_argument("--reads", type=int, default=20)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("params", help="derived deployment table")
    s.add_argument("--config", required=True)
    s.add_argument("--m", type=float, default=1.0, help="online users")
    s.add_argument("--read-interval", type=float, default=None)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("dev-config", help="write a local cluster config with fresh keys")
    s.add_argument("--out", required=True)
    s.add_argument("--l", type=int, default=3)
    s.add_argument("--n", type=int, default=4096)
    s.add_argument("--z", type=int, default=256)
    s.add_argument("--base-port", type=int, default=0)
    s.set_defaults(func=cmd_dev_config)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PirMsgError, OSError, ValueError) as exc:
        print(f"pirmsg {args.cmd}: {exc}", file=sys.stderr)
        return 2
