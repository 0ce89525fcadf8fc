"""
Dataflow Graph Models

Logical operator graphs, their physical expansion, and region partitions.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import networkx as nx

from ..config import ConfigError
from ..shuffle.strategies import ShuffleStrategy

logger = logging.getLogger(__name__)


class GraphError(Exception):
    """Structurally invalid graph, with the offending location."""

    def __init__(self, message: str, location: Optional[str] = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class OperatorKind(str, Enum):
    SOURCE = "Source"
    FILTER = "Filter"
    WINDOW_COUNT = "WindowCount"
    LOOKUP = "Lookup"
    JOIN = "Join"
    SINK = "Sink"

    @property
    def deterministic(self) -> bool:
        """Output depends only on input order, never on arrival timing."""
        return self != OperatorKind.JOIN


@dataclass(frozen=True)
class OperatorSpec:
    id: str
    kind: OperatorKind
    parallelism: int
    selectivity: float = 1.0


@dataclass(frozen=True)
class EdgeSpec:
    source: str
    target: str
    strategy: ShuffleStrategy


class TaskId(NamedTuple):
    operator: str
    index: int

    def __str__(self) -> str:
        return f"{self.operator}[{self.index}]"


@dataclass(frozen=True)
class EdgeDescriptor:
    """Shared routing descriptor; every channel references exactly one."""
    strategy: ShuffleStrategy
    scheme: tuple


@dataclass(frozen=True)
class ChannelSpec:
    producer: TaskId
    consumer: TaskId
    edge: int
    descriptor: int


# ============================================================================
# Logical Graph
# ============================================================================

@dataclass
class LogicalGraph:
    operators: list[OperatorSpec]
    edges: list[EdgeSpec] = field(default_factory=list)

    # ------------------------------------------------------------------
    # Parsing
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, document: dict[str, Any]) -> "LogicalGraph":
        """Parse a job definition {operators:[...], edges:[...]}."""
        if not isinstance(document, dict):
            raise GraphError("job definition must be an object")
        operators = []
        for i, raw in enumerate(document.get("operators", [])):
            loc = f"operators[{i}]"
            try:
                kind = OperatorKind(raw["kind"])
            except KeyError as e:
                raise GraphError(f"missing field {e.args[0]!r}", location=loc) from e
            except ValueError as e:
                raise GraphError(f"unknown operator kind {raw.get('kind')!r}", location=loc) from e
            if "id" not in raw:
                raise GraphError("missing field 'id'", location=loc)
            operators.append(OperatorSpec(
                id=str(raw["id"]),
                kind=kind,
                parallelism=int(raw.get("parallelism", 1)),
                selectivity=float(raw.get("selectivity", 1.0)),
            ))
        edges = []
        for i, raw in enumerate(document.get("edges", [])):
            loc = f"edges[{i}]"
            try:
                strategy = ShuffleStrategy.parse(raw.get("strategy", "forward"), raw.get("params"))
                edges.append(EdgeSpec(source=str(raw["from"]), target=str(raw["to"]),
                                      strategy=strategy))
            except KeyError as e:
                raise GraphError(f"missing field {e.args[0]!r}", location=loc) from e
            except ConfigError as e:
                raise GraphError(str(e), location=loc) from e
        graph = cls(operators=operators, edges=edges)
        graph.validate()
        return graph

    def to_dict(self) -> dict[str, Any]:
        return {
            "operators": [
                {"id": op.id, "kind": op.kind.value, "parallelism": op.parallelism,
                 "selectivity": op.selectivity}
                for op in self.operators
            ],
            "edges": [
                {"from": e.source, "to": e.target, **e.strategy.to_dict()} for e in self.edges
            ],
        }

    # ------------------------------------------------------------------
    # Validation and queries
    # ------------------------------------------------------------------

    def validate(self) -> None:
        ids = [op.id for op in self.operators]
        if not ids:
            raise GraphError("graph has no operators")
        seen: set[str] = set()
        for i, op in enumerate(self.operators):
            if op.id in seen:
                raise GraphError(f"duplicate operator id {op.id!r}", location=f"operators[{i}]")
            seen.add(op.id)
            if op.parallelism < 1:
                raise GraphError(f"parallelism must be >= 1, got {op.parallelism}",
                                 location=f"operators[{i}]")
            if op.selectivity < 0:
                raise GraphError("selectivity must be >= 0", location=f"operators[{i}]")
        specs = self.operator_map
        for i, edge in enumerate(self.edges):
            loc = f"edges[{i}]"
            for endpoint in (edge.source, edge.target):
                if endpoint not in specs:
                    raise GraphError(f"unknown operator {endpoint!r}", location=loc)
            if specs[edge.target].kind == OperatorKind.SOURCE:
                raise GraphError(f"source {edge.target!r} cannot have inbound edges", location=loc)
            try:
                edge.strategy.validate(specs[edge.source].parallelism,
                                       specs[edge.target].parallelism)
            except ConfigError as e:
                raise GraphError(str(e), location=loc) from e
        graph = self.nx_graph()
        if not nx.is_directed_acyclic_graph(graph):
            cycle = nx.find_cycle(graph)
            raise GraphError(f"graph contains a cycle through {cycle[0][0]!r}")
        for op in self.operators:
            if op.kind != OperatorKind.SOURCE and graph.in_degree(op.id) == 0:
                raise GraphError(f"operator {op.id!r} has no inbound edge")

    def nx_graph(self) -> "nx.MultiDiGraph":
        graph = nx.MultiDiGraph()
        graph.add_nodes_from(op.id for op in self.operators)
        for i, edge in enumerate(self.edges):
            graph.add_edge(edge.source, edge.target, key=i)
        return graph

    @property
    def operator_map(self) -> dict[str, OperatorSpec]:
        return {op.id: op for op in self.operators}

    def operator(self, op_id: str) -> OperatorSpec:
        for op in self.operators:
            if op.id == op_id:
                return op
        raise GraphError(f"unknown operator {op_id!r}")

    def topological_order(self) -> list[str]:
        """Operator ids upstream-first; ties follow declaration order."""
        order = {op.id: i for i, op in enumerate(self.operators)}
        return list(nx.lexicographical_topological_sort(self.nx_graph(), key=order.__getitem__))

    def upstream_edges(self, op_id: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.target == op_id]

    def downstream_edges(self, op_id: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.source == op_id]

    def sources(self) -> list[OperatorSpec]:
        return [op for op in self.operators if op.kind == OperatorKind.SOURCE]

    def is_terminal(self, op_id: str) -> bool:
        return not self.downstream_edges(op_id)

    def is_scalable(self, op_id: str) -> bool:
        """Non-source operators whose every incident edge repartitions freely."""
        if self.operator(op_id).kind == OperatorKind.SOURCE:
            return False
        incident = [e for e in self.edges if op_id in (e.source, e.target)]
        return all(e.strategy.repartitions for e in incident)

    def with_parallelism(self, overrides: dict[str, int]) -> "LogicalGraph":
        ops = [replace(op, parallelism=int(overrides.get(op.id, op.parallelism)))
               for op in self.operators]
        graph = LogicalGraph(operators=ops, edges=list(self.edges))
        graph.validate()
        return graph

    @property
    def parallelism(self) -> dict[str, int]:
        return {op.id: op.parallelism for op in self.operators}


def load_job_file(path: Union[str, Path]) -> LogicalGraph:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise GraphError(f"line {e.lineno}: {e.msg}", location=str(path)) from e
    graph = LogicalGraph.from_dict(document)
    logger.info(f"Loaded job {path.name}: {len(graph.operators)} operators, "
                f"{len(graph.edges)} edges")
    return graph


# ============================================================================
# Physical Graph
# ============================================================================

@dataclass
class ExecutionGraph:
    logical: LogicalGraph
    tasks: list[TaskId]
    channels: list[ChannelSpec]
    edge_descriptors: list[EdgeDescriptor]
    placement: dict[TaskId, str]
    slots_per_tm: int = 1

    @property
    def tm_ids(self) -> list[str]:
        return list(dict.fromkeys(self.placement[t] for t in self.tasks))

    def tasks_of(self, op_id: str) -> list[TaskId]:
        return [t for t in self.tasks if t.operator == op_id]

    def tasks_on(self, tm_id: str) -> list[TaskId]:
        return [t for t in self.tasks if self.placement.get(t) == tm_id]

    def descriptor_of(self, channel: ChannelSpec) -> EdgeDescriptor:
        return self.edge_descriptors[channel.descriptor]


@dataclass
class RegionPartition:
    regions: list[frozenset[TaskId]]
    task_to_region: dict[TaskId, int]

    def region_of(self, task: TaskId) -> int:
        return self.task_to_region[task]

    def tasks_in(self, region: int) -> frozenset[TaskId]:
        return self.regions[region]

    def __len__(self) -> int:
        return len(self.regions)
