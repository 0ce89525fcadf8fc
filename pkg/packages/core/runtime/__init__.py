"""
Runtime Module

Deterministic discrete-event execution core: virtual clock, tasks, and credit-based channels.
"""

from .engine import NS_PER_MS, NS_PER_S, Engine, EngineError, millis, seconds
from .channel import Channel, SendOutcome
from .records import Barrier, Record
from .operators import Operator, build_operator, window_key
from .task import Cluster, SourceFeed, TaskManagerSim, TaskRuntime, TaskState
from .dataflow import LOSS_CATEGORIES, Dataflow, DropCategory

__all__ = [
    "NS_PER_MS",
    "NS_PER_S",
    "Engine",
    "EngineError",
    "millis",
    "seconds",
    "Channel",
    "SendOutcome",
    "Barrier",
    "Record",
    "Operator",
    "build_operator",
    "window_key",
    "Cluster",
    "SourceFeed",
    "TaskManagerSim",
    "TaskRuntime",
    "TaskState",
    "LOSS_CATEGORIES",
    "Dataflow",
    "DropCategory",
]
