"""
Shuffle Module

Static and adaptive partitioning strategies that pick an output channel per record.
"""

from .strategies import (
    Dispatch,
    RouteContext,
    ShuffleStrategy,
    StrategyKind,
    connected_consumers,
    group_of,
    rescale_range,
)
from .router import (
    Partitioner,
    ewma,
    route_backlog_aware,
    route_static,
    route_weakhash,
    weakhash_candidates,
)

__all__ = [
    "Dispatch",
    "RouteContext",
    "ShuffleStrategy",
    "StrategyKind",
    "connected_consumers",
    "group_of",
    "rescale_range",
    "Partitioner",
    "ewma",
    "route_backlog_aware",
    "route_static",
    "route_weakhash",
    "weakhash_candidates",
]
