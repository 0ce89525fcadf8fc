"""
Graph Module

Logical dataflow graphs, physical expansion with shared edge descriptors, and regions.
"""

from .models import (
    ChannelSpec,
    EdgeDescriptor,
    EdgeSpec,
    ExecutionGraph,
    GraphError,
    LogicalGraph,
    OperatorKind,
    OperatorSpec,
    RegionPartition,
    TaskId,
    load_job_file,
)
from .expand import dedup_edge_descriptors, expand, tm_name
from .regions import derive_regions

__all__ = [
    "ChannelSpec",
    "EdgeDescriptor",
    "EdgeSpec",
    "ExecutionGraph",
    "GraphError",
    "LogicalGraph",
    "OperatorKind",
    "OperatorSpec",
    "RegionPartition",
    "TaskId",
    "load_job_file",
    "dedup_edge_descriptors",
    "expand",
    "tm_name",
    "derive_regions",
]
