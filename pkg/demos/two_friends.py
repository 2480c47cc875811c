"""
Two friends exchange messages through a local cluster
=====================================================

Alice owns a log, shares its handle with Bob, and publishes. Bob polls the
interest window, learns that something landed, and reads it privately. Both
of them send exactly one write and one read per tick whatever they are doing.
"""

from pirmsg.client import Client, SchedulerConfig
from pirmsg.config import dev_cluster_config
from pirmsg.links import LocalLink
from pirmsg.server import Cluster

cfg = dev_cluster_config(3, n=1024, z=64, rotate_on_seal=True)
cluster = Cluster(cfg, enforce_rate=False)


def friend(name: str, seed: int) -> Client:
    link = LocalLink(cluster.cfg, cluster.leader, name.encode().ljust(8, b"."))
    # write every tick, read every tick, fetch interest updates every tick
    return Client(cluster.cfg, link, SchedulerConfig(1, 1, 1), seed=bytes([seed]) * 32)


alice, bob = friend("alice", 1), friend("bob", 2)
handle = alice.create_log()
bob.subscribe(handle)  # the handle travels out of band

for text in ("hi bob", "lunch at noon?", "a longer note that needs more than one chunk " * 2):
    alice.publish(handle, text.encode())

for tick in range(12):
    w = alice.write_tick()
    bob.write_tick()  # a fake write: Bob has nothing to say
    cluster.leader.seal_epoch()
    plan = bob.read_tick()
    alice.read_tick()
    what = "fake" if plan.is_fake else f"seq {plan.expected[1]} attempt {int(plan.attempt)}"
    print(f"tick {tick:2d}  bob reads bucket {plan.target_bucket:4d} ({what})")

for d in bob.delivered:
    print(f"bob got seq {d.seqno}: {d.message.decode()}")
