"""Metadata-private publish/subscribe messaging over XOR private information retrieval.

Clients write fixed-size sealed records into a replicated cuckoo table and read
buckets back with multi-server PIR, at a constant rate that hides activity.
"""

from .config import Config, ServerInfo, ServerKeys, dev_cluster_config
from .client import Client, SchedulerConfig
from .logproto import LogHandle
from .server import Cluster, Leader, Replica

__version__ = "0.1.0"

__all__ = ["Config", "ServerInfo", "ServerKeys", "dev_cluster_config", "Client", "SchedulerConfig",
           "LogHandle", "Cluster", "Leader", "Replica", "__version__"]
