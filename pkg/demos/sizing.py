"""
What does a deployment cost?
============================

Request sizes, message lifetime and daily client traffic for three table
sizes, then a simulated group chat to compare the closed form with a run.
"""

from pirmsg import paramtool
from pirmsg.config import Config
from pirmsg.harness.workload import generate_chat, replay_workload

for n in (10_000, 100_000, 1_000_000):
    p = paramtool.DeploymentParams.for_capacity(n, m=paramtool.users_for_ttl(n, 1.0, 86_400))
    print(f"n = {n:,}")
    print(paramtool.format_table(paramtool.table(p)))
    print()

chat = generate_chat(60, users=4, mean_gap=1.0, seed=3)
rep = replay_workload(chat, Config(n=2048, z=128), read_interval=0.1, write_interval=0.1,
                      get_updates_every=1, seed=3)
print(f"replay: {rep.delivered}/{rep.expected_deliveries} delivered, "
      f"mean latency {rep.latency_mean * 1e3:.0f} ms, p95 {rep.latency_p95 * 1e3:.0f} ms")
print(f"bytes per client-day: simulated {rep.bytes_per_client_day / 1e6:.1f} MB, "
      f"closed form {rep.closed_form_bytes_per_client_day / 1e6:.1f} MB")
