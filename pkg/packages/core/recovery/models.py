"""
Recovery Models

Failure events, recovery plans and the reports emitted once a plan completes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

from ..checkpoint.models import GlobalCheckpointRecord
from ..graph.models import TaskId


class RecoveryStrategy(str, Enum):
    FULL = "full"
    REGION = "region"
    SINGLE_TASK = "single_task"


class FailureScope(str, Enum):
    TASK = "Task"
    TM = "TM"
    JM = "JM"


class PolicyError(Exception):
    """A recovery strategy that the job's SLO does not allow."""

    def __init__(self, message: str, strategy: Optional[RecoveryStrategy] = None,
                 gamma: Optional[str] = None):
        super().__init__(message)
        self.strategy = strategy
        self.gamma = gamma


@dataclass
class FailureEvent:
    time_ns: int
    scope: FailureScope
    target: Union[str, TaskId, None] = None
    cause: str = ""
    tasks: list[TaskId] = field(default_factory=list)


@dataclass
class RecoveryPlan:
    strategy: RecoveryStrategy
    failure: FailureEvent
    tasks_to_restart: frozenset[TaskId]
    restore_record: Optional[GlobalCheckpointRecord]
    regions: frozenset[int] = frozenset()
    rewind: dict[TaskId, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks_to_restart)


@dataclass
class RecoveryReport:
    time_ns: int
    scope: FailureScope
    strategy: str
    tasks: list[TaskId]
    recovery_time_ns: int
    dropped: int = 0
    replayed: int = 0
    moved: int = 0
    rpc_count: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "time": self.time_ns,
            "scope": self.scope.value,
            "strategy": self.strategy,
            "tasks": [str(t) for t in self.tasks],
            "recovery_time_ns": self.recovery_time_ns,
            "dropped": self.dropped,
            "replayed": self.replayed,
            "moved": self.moved,
            "rpc_count": self.rpc_count,
        }


@dataclass
class SwitchReport:
    task: TaskId
    standby_tm: Optional[str]
    switch_latency_ns: int
    fallback: bool = False
