import json
import subprocess
import sys
import time

import pytest

from pirmsg import cli, paramtool
from pirmsg import crypto
from pirmsg.client import Client, SchedulerConfig
from pirmsg.config import Config, dev_cluster_config
from pirmsg.errors import ParseError
from pirmsg.harness.bench import bench_pir
from pirmsg.harness.cluster import StartupRefused, run_cluster
from pirmsg.harness.game import (GameError, GameScript, compare_traces, load_traces, real_vs_fake_script,
                                 run_game)
from pirmsg.harness.workload import format_chat_line, generate_chat, parse_chat_log, replay_workload
from pirmsg.links import NetworkLink

# -- workload ---------------------------------------------------------------


def test_parse_chat_log():
    lines = ["2016-01-01T00:00:02Z\t#a\tbob\tsecond\n",
             "\n",
             "2016-01-01T00:00:01\t#a\talice\tfirst\twith tab\n"]
    chat = parse_chat_log(lines)
    assert [c.sender for c in chat] == ["alice", "bob"]
    assert chat[0].text == "first\twith tab"
    assert parse_chat_log([format_chat_line(c) for c in chat]) == chat


@pytest.mark.parametrize("bad, lineno", [
    (["2016-01-01T00:00:00Z\t#a\tbob\tok", "garbage"], 2),
    (["not-a-time\t#a\tbob\thi"], 1),
    (["2016-01-01T00:00:00Z\t\tbob\thi"], 1),
])
def test_parse_errors_name_the_line(bad, lineno):
    with pytest.raises(ParseError) as exc:
        parse_chat_log(bad)
    assert exc.value.lineno == lineno


def test_empty_log_empty_report():
    rep = replay_workload(parse_chat_log([]), Config(n=256, z=64))
    assert rep.messages == 0 and rep.delivered == 0 and rep.delivery_ratio == 1.0


def test_generate_chat_deterministic():
    a = generate_chat(50, users=4, channels=3, seed=9)
    assert a == generate_chat(50, users=4, channels=3, seed=9)
    assert all(x.ts < y.ts for x, y in zip(a, a[1:]))


def test_two_user_exchange_latency_bound():
    chat = generate_chat(40, users=2, mean_gap=1.0, seed=1)
    rep = replay_workload(chat, Config(n=4096, z=128), read_interval=0.1, seed=1)
    assert rep.delivered == rep.expected_deliveries == 40
    assert rep.latency_mean < 2 * 0.1 + 0.05


def test_multichunk_message_delivered():
    chat = parse_chat_log(["2016-01-01T00:00:00Z\t#a\talice\t" + "y" * 300,
                           "2016-01-01T00:00:01Z\t#a\tbob\tok"])
    rep = replay_workload(chat, Config(n=1024, z=128), read_interval=0.1, seed=0)
    assert rep.delivered == rep.expected_deliveries == 2


# -- game -------------------------------------------------------------------

def tiny_script(m=2, rounds=12, seed=0):
    return real_vs_fake_script(m, rounds, seed, updates_every=5)


def test_same_branch_same_seed_identical():
    s = tiny_script()
    s_same = GameScript(s.m, [r if "extend" not in r else {"extend": [[p[0], p[0]] for p in r["extend"]]}
                              for r in s.rounds])
    a, b = run_game(s_same, 0, seed=3), run_game(s_same, 1, seed=3)
    assert [(t.shape(), t.digest) for t in a.traces] == [(t.shape(), t.digest) for t in b.traces]


def test_real_vs_fake_shapes_equal():
    s = tiny_script(rounds=20)
    r0, r1 = run_game(s, 0, seed=1), run_game(s, 1, seed=1)
    v = compare_traces(r0.traces, r1.traces)
    assert v.shape_equal and not v.updates_flagged
    assert len(r0.delivered) > 0 and not r1.delivered


def test_invalid_create_log_refused():
    s = GameScript(2, [{"create_log": {"writer": 0, "readers": [7]}},
                       {"create_log": {"writer": 1, "readers": [0]}}])
    res = run_game(s, 0)
    assert res.refused == [0]
    bad = GameScript(1, [{"extend": [[{"op": "real_write", "log": 3, "seqno": 0}, {"op": "fake_write"}]]}])
    with pytest.raises(GameError):
        run_game(bad, 0)


def test_script_validation():
    with pytest.raises(GameError):
        GameScript(2, [{"extend": [[{"op": "fake_read"}, {"op": "fake_read"}]]}])
    with pytest.raises(GameError):
        GameScript(1, [{"dance": 1}])


def test_compare_detects_extra_frame(tmp_path):
    res = run_game(tiny_script(rounds=4), 0)
    res.dump(tmp_path / "t.jsonl")
    t = load_traces(tmp_path / "t.jsonl")
    assert compare_traces(t, t).shape_equal
    v = compare_traces(t, t[:-1])
    assert not v.shape_equal and "extra" in v.mismatch["reason"]


def test_payload_monobit():
    s = tiny_script(m=3, rounds=40)
    v = compare_traces(run_game(s, 0, seed=2).traces, run_game(s, 1, seed=2).traces)
    for name in ("write_data", "read_blobs", "read_reply"):
        assert v.field_stats[name]["monobit_p0"] > 0.01
        assert v.field_stats[name]["monobit_p1"] > 0.01


# -- cluster ----------------------------------------------------------------

def test_thread_cluster_ready_and_refusal():
    cfg = dev_cluster_config(3, n=256, z=64)
    with run_cluster(cfg) as rc:
        assert rc.leader_address == cfg.servers[0].host_port
    cfg = dev_cluster_config(3, n=256, z=64)
    odd = cfg.replace(s_cuckoo=b"\x01" * 32)
    with pytest.raises(StartupRefused, match="fingerprint"):
        run_cluster([cfg, odd, cfg])


def test_process_cluster_delivers():

    cfg = dev_cluster_config(3, n=256, z=64)
    with run_cluster(cfg, processes=True, timeout=20):
        links = [NetworkLink(cfg, crypto.KeyPair.generate()) for _ in range(2)]
        a, b = (Client(cfg, ln, SchedulerConfig(1, 1, 0)) for ln in links)
        h = a.create_log()
        b.subscribe(h)
        a.publish(h, b"over tcp")
        a.write_tick()
        time.sleep(cfg.seal_interval * 6)
        for _ in range(4):
            b.read_tick()
        for ln in links:
            ln.close()
    assert [d.message for d in b.delivered] == [b"over tcp"]


# -- bench and CLI ----------------------------------------------------------

def test_bench_small():
    row = bench_pir(2000, z=64, reads=3, warmup=1)
    assert row["b"] == 527 and row["mean_ms"] > 0


def test_cli_params_and_dev_config(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert cli.main(["dev-config", "--out", str(out), "--n", "10000", "--z", "1024"]) == 0
    capsys.readouterr()
    assert cli.main(["params", "--config", str(out), "--json"]) == 0
    row = json.loads(capsys.readouterr().out)
    expect = paramtool.read_request_bytes(paramtool.DeploymentParams.from_config(Config.load(str(out))))
    assert row["read_request_bytes"] == expect == 1176


def test_cli_replay_and_game(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(Config(n=512, z=64).to_json())
    log = tmp_path / "chat.tsv"
    log.write_text("2016-01-01T00:00:00Z\t#a\talice\thi\n2016-01-01T00:00:01Z\t#a\tbob\thello\n")
    assert cli.main(["replay", "--config", str(cfg), "--log", str(log), "--read-interval", "0.1", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["delivered"] == 2
    script = tmp_path / "s.json"
    script.write_text(json.dumps(tiny_script(rounds=4).to_dict()))
    for bit in (0, 1):
        assert cli.main(["game", "--script", str(script), "--bit", str(bit), "--out",
                         str(tmp_path / f"t{bit}.jsonl")]) == 0
    assert cli.main(["compare", str(tmp_path / "t0.jsonl"), str(tmp_path / "t1.jsonl"), "--json"]) == 0


def test_cli_reports_parse_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(Config(n=512, z=64).to_json())
    log = tmp_path / "bad.tsv"
    log.write_text("garbage line\n")
    assert cli.main(["replay", "--config", str(cfg), "--log", str(log)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pirmsg", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("server", "replay", "game", "compare", "bench-pir", "params"):
        assert cmd in out.stdout
