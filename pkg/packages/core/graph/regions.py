"""
Failure-Recovery Regions

All exchanges are pipelined, so regions are the connected components of the
task graph over channels.
"""
from __future__ import annotations

import logging

import networkx as nx

from .models import ExecutionGraph, RegionPartition

logger = logging.getLogger(__name__)


def derive_regions(exec_graph: ExecutionGraph) -> RegionPartition:
    graph = nx.Graph()
    graph.add_nodes_from(exec_graph.tasks)
    graph.add_edges_from((c.producer, c.consumer) for c in exec_graph.channels)

    position = {task: i for i, task in enumerate(exec_graph.tasks)}
    components = sorted(
        (frozenset(c) for c in nx.connected_components(graph)),
        key=lambda comp: min(position[t] for t in comp),
    )
    task_to_region = {task: r for r, comp in enumerate(components) for task in comp}
    logger.debug(f"Derived {len(components)} regions over {len(exec_graph.tasks)} tasks")
    return RegionPartition(regions=components, task_to_region=task_to_region)
