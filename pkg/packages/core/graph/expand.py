"""
Physical Graph Expansion

Materializes tasks, strategy-implied channels, shared edge descriptors and a
deterministic slot-first placement from a logical graph.
"""
from __future__ import annotations

import logging

from ..shuffle.strategies import connected_consumers
from .models import (
    ChannelSpec,
    EdgeDescriptor,
    ExecutionGraph,
    GraphError,
    LogicalGraph,
    TaskId,
)

logger = logging.getLogger(__name__)


def tm_name(index: int) -> str:
    return f"tm-{index}"


def expand(logical: LogicalGraph, slots_per_tm: int, dedup: bool = True) -> ExecutionGraph:
    """
    Expand a logical graph into its execution graph.

    With ``dedup`` disabled every channel gets its own descriptor, which is
    the baseline the startup cost model compares against.
    """
    if slots_per_tm < 1:
        raise GraphError(f"slots_per_tm must be >= 1, got {slots_per_tm}")
    logical.validate()

    tasks = [TaskId(op.id, i) for op in logical.operators for i in range(op.parallelism)]
    placement = {task: tm_name(j // slots_per_tm) for j, task in enumerate(tasks)}

    specs = logical.operator_map
    descriptors: list[EdgeDescriptor] = []
    index: dict[tuple, int] = {}
    channels: list[ChannelSpec] = []
    for e, edge in enumerate(logical.edges):
        up = specs[edge.source].parallelism
        down = specs[edge.target].parallelism
        scheme = edge.strategy.scheme(down)
        for producer in range(up):
            for consumer in connected_consumers(edge.strategy, producer, up, down):
                if dedup:
                    key = (edge.strategy, scheme)
                    if key not in index:
                        index[key] = len(descriptors)
                        descriptors.append(EdgeDescriptor(edge.strategy, scheme))
                    d = index[key]
                else:
                    d = len(descriptors)
                    descriptors.append(EdgeDescriptor(edge.strategy, scheme))
                channels.append(ChannelSpec(
                    producer=TaskId(edge.source, producer),
                    consumer=TaskId(edge.target, consumer),
                    edge=e,
                    descriptor=d,
                ))

    graph = ExecutionGraph(
        logical=logical,
        tasks=tasks,
        channels=channels,
        edge_descriptors=descriptors,
        placement=placement,
        slots_per_tm=slots_per_tm,
    )
    logger.debug(f"Expanded {len(logical.operators)} operators into {len(tasks)} tasks, "
                 f"{len(channels)} channels, {len(descriptors)} descriptors")
    return graph


def dedup_edge_descriptors(exec_graph: ExecutionGraph) -> tuple[int, float]:
    """Distinct (strategy, scheme) descriptors used by channels, and channels per descriptor."""
    distinct = {
        (exec_graph.edge_descriptors[c.descriptor].strategy,
         exec_graph.edge_descriptors[c.descriptor].scheme)
        for c in exec_graph.channels
    }
    if not distinct:
        return 0, 0.0
    return len(distinct), len(exec_graph.channels) / len(distinct)
