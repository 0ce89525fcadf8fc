"""
Tasks and TaskManagers

Task state machines, simulated TaskManager processes, and the slot pool used
for placement and re-allocation after failures.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Optional

from ..checkpoint.lazy import KeyedStateStore
from ..graph.models import TaskId
from .engine import EngineError

if TYPE_CHECKING:
    from .channel import Channel
    from .operators import Operator
    from .records import Record
    from ..shuffle.router import Partitioner

logger = logging.getLogger(__name__)


class TaskState(str, Enum):
    CREATED = "Created"
    DEPLOYING = "Deploying"
    RUNNING = "Running"
    FAILED = "Failed"
    RECOVERING = "Recovering"
    CANCELED = "Canceled"


_ALLOWED = {
    TaskState.CREATED: {TaskState.DEPLOYING, TaskState.CANCELED, TaskState.FAILED},
    TaskState.DEPLOYING: {TaskState.RUNNING, TaskState.FAILED, TaskState.CANCELED},
    TaskState.RUNNING: {TaskState.FAILED, TaskState.CANCELED},
    TaskState.FAILED: {TaskState.RECOVERING, TaskState.CANCELED},
    TaskState.RECOVERING: {TaskState.RUNNING, TaskState.FAILED, TaskState.CANCELED},
    TaskState.CANCELED: {TaskState.RECOVERING, TaskState.DEPLOYING},
}


@dataclass
class SourceFeed:
    """Offset-addressable source: due time and key are pure functions of the offset."""
    due: Callable[[int], int]
    key: Callable[[int], int]
    limit: int


@dataclass
class OutputGate:
    """One outgoing edge of a task: its partitioner and channels by downstream index."""
    edge: int
    partitioner: "Partitioner"
    channels: dict[int, "Channel"]
    ordered: list["Channel"]
    needs_backlog: bool = False
    needs_load: bool = False


class TaskRuntime:
    """Runtime state of one physical task."""

    def __init__(self, task_id: TaskId, operator: "Operator", tm_id: str, service_ns: int,
                 chunks: int = 64):
        self.id = task_id
        self.operator = operator
        self.tm_id = tm_id
        self.service_ns = service_ns
        self.state = TaskState.CREATED
        self.epoch = 0
        self.incarnation = 0
        self.store = KeyedStateStore(chunks)

        self.inputs: list["Channel"] = []
        self.outputs: list[OutputGate] = []
        self.rr = 0
        self.poll_at: Optional[int] = None

        self.busy = False
        self.in_service: Optional["Record"] = None
        self.in_service_from: Optional["Channel"] = None
        self.current_service_ns = 0
        self.blocked = False
        self.block_token = 0
        self.pending: deque[tuple[int, "Record"]] = deque()
        self.awaiting_chunk = False

        self.aligning: Optional[int] = None
        self.aligned: set[int] = set()
        self.fence_id = 0

        self.feed: Optional[SourceFeed] = None
        self.source_slot = 0
        self.next_offset = 0
        self.emit_scheduled = False
        self.pending_barrier: Optional[int] = None

        self.delivered: list[tuple[tuple, object]] = []
        self.fetch_latency: Optional[Callable[[int], Optional[int]]] = None
        self.fetch_retry_ns = 1_000_000_000
        self.standby_tm: Optional[str] = None

        self.processed = 0
        self.arrived = 0
        self.busy_ns = 0

    @property
    def is_source(self) -> bool:
        return self.feed is not None

    @property
    def terminal(self) -> bool:
        return self.operator.terminal

    @property
    def running(self) -> bool:
        return self.state == TaskState.RUNNING

    def transition(self, new_state: TaskState) -> None:
        if new_state == self.state:
            return
        if new_state not in _ALLOWED[self.state]:
            raise EngineError(f"illegal transition {self.state.value} -> {new_state.value} "
                              f"for {self.id}")
        self.state = new_state

    def __repr__(self) -> str:
        return f"TaskRuntime({self.id}, {self.state.value}, epoch={self.epoch})"


@dataclass(eq=False)
class TaskManagerSim:
    id: str
    slots: int
    alive: bool = True
    startup_latency_ns: int = 0
    speed_factor: float = 1.0
    hosted: list[TaskId] = field(default_factory=list)
    spare: bool = False
    ready_at_ns: int = 0

    @property
    def free_slots(self) -> int:
        return max(0, self.slots - len(self.hosted)) if self.alive else 0


class Cluster:
    """
    TaskManagers of one job.

    Killing a TM returns every hosted task so the caller can fail them at the
    same virtual instant.
    """

    def __init__(self, slots_per_tm: int, startup_sampler: Callable[[], int]):
        self.slots_per_tm = slots_per_tm
        self.startup_sampler = startup_sampler
        self.tms: dict[str, TaskManagerSim] = {}
        self._next_id = 0
        self.requested = 0

    @classmethod
    def from_placement(cls, placement: dict[TaskId, str], slots_per_tm: int, spares: int,
                       startup_sampler: Callable[[], int]) -> "Cluster":
        cluster = cls(slots_per_tm, startup_sampler)
        for task, tm_id in placement.items():
            tm = cluster._ensure(tm_id)
            tm.hosted.append(task)
        for _ in range(spares):
            cluster.add_tm(spare=True)
        return cluster

    def _ensure(self, tm_id: str) -> TaskManagerSim:
        if tm_id not in self.tms:
            self.tms[tm_id] = TaskManagerSim(id=tm_id, slots=self.slots_per_tm)
            index = int(tm_id.rsplit("-", 1)[-1]) if tm_id.rsplit("-", 1)[-1].isdigit() else 0
            self._next_id = max(self._next_id, index + 1)
        return self.tms[tm_id]

    def add_tm(self, spare: bool = False, ready_at_ns: int = 0) -> TaskManagerSim:
        tm = TaskManagerSim(id=f"tm-{self._next_id}", slots=self.slots_per_tm, spare=spare,
                            ready_at_ns=ready_at_ns)
        self._next_id += 1
        self.tms[tm.id] = tm
        return tm

    def alive_ids(self) -> list[str]:
        return [tm.id for tm in self.tms.values() if tm.alive]

    def hosting_ids(self) -> list[str]:
        return [tm.id for tm in self.tms.values() if tm.alive and tm.hosted]

    def kill(self, tm_id: str) -> list[TaskId]:
        tm = self.tms[tm_id]
        if not tm.alive:
            return []
        tm.alive = False
        hosted = list(tm.hosted)
        tm.hosted.clear()
        logger.info(f"TaskManager {tm_id} killed ({len(hosted)} tasks)")
        return hosted

    def release(self, task: TaskId) -> None:
        for tm in self.tms.values():
            if task in tm.hosted:
                tm.hosted.remove(task)

    def acquire(self, tasks: list[TaskId], now: int) -> dict[TaskId, tuple[str, int]]:
        """
        Place tasks on free slots, starting fresh TMs when none are left.

        Returns task -> (tm id, time the TM is ready). Spare and partially
        used TMs are ready immediately; fresh TMs pay a sampled startup latency.
        """
        result: dict[TaskId, tuple[str, int]] = {}
        queue = list(tasks)
        for tm in list(self.tms.values()):
            while queue and tm.free_slots > 0:
                task = queue.pop(0)
                tm.hosted.append(task)
                result[task] = (tm.id, max(now, tm.ready_at_ns))
        while queue:
            latency = int(self.startup_sampler())
            tm = self.add_tm(ready_at_ns=now + latency)
            tm.startup_latency_ns = latency
            self.requested += 1
            while queue and tm.free_slots > 0:
                task = queue.pop(0)
                tm.hosted.append(task)
                result[task] = (tm.id, tm.ready_at_ns)
        return result
