"""
Checkpoint Models

Attempts, snapshot handles, per-region registry entries and merged global records.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from ..graph.models import TaskId

logger = logging.getLogger(__name__)


class CheckpointMode(str, Enum):
    GLOBAL = "global"
    REGION = "region"


class TaskStatus(str, Enum):
    PENDING = "Pending"
    ACKED = "Acked"
    FAILED = "Failed"


class Outcome(str, Enum):
    SUCCEEDED = "succeeded"
    PARTIAL = "partial"
    FAILED = "failed"


@dataclass(frozen=True)
class SnapshotHandle:
    task: TaskId
    checkpoint_id: int
    store_key: str
    size: int
    base: Optional["SnapshotHandle"] = None

    @property
    def is_full(self) -> bool:
        return self.base is None

    def chain(self) -> list["SnapshotHandle"]:
        """This handle and its bases, newest first, ending at a full snapshot."""
        chain = []
        handle: Optional[SnapshotHandle] = self
        while handle is not None:
            chain.append(handle)
            handle = handle.base
        return chain

    @property
    def chain_bytes(self) -> int:
        return sum(h.size for h in self.chain())


@dataclass
class TaskAck:
    status: TaskStatus = TaskStatus.PENDING
    handle: Optional[SnapshotHandle] = None
    offset: Optional[int] = None
    cause: Optional[str] = None


@dataclass
class CheckpointAttempt:
    id: int
    mode: CheckpointMode
    trigger_time: int
    deadline: int
    statuses: dict[TaskId, TaskAck] = field(default_factory=dict)
    finalized: bool = False
    outcome: Optional[Outcome] = None
    finished_at: Optional[int] = None
    region_status: dict[int, bool] = field(default_factory=dict)

    def ack(self, task: TaskId, handle: SnapshotHandle, offset: Optional[int]) -> None:
        entry = self.statuses[task]
        if entry.status == TaskStatus.PENDING:
            entry.status = TaskStatus.ACKED
            entry.handle = handle
            entry.offset = offset

    def fail(self, task: TaskId, cause: str) -> None:
        entry = self.statuses[task]
        if entry.status == TaskStatus.PENDING:
            entry.status = TaskStatus.FAILED
            entry.cause = cause

    @property
    def resolved(self) -> bool:
        return all(s.status != TaskStatus.PENDING for s in self.statuses.values())

    def all_acked(self, tasks=None) -> bool:
        tasks = self.statuses.keys() if tasks is None else tasks
        return all(self.statuses[t].status == TaskStatus.ACKED for t in tasks)

    def any_failed(self, tasks) -> bool:
        return any(self.statuses[t].status == TaskStatus.FAILED for t in tasks)


@dataclass(frozen=True)
class RegionEntry:
    """Newest successful checkpoint of one region."""
    checkpoint_id: int
    handles: dict[TaskId, Optional[SnapshotHandle]]
    offsets: dict[TaskId, int]


@dataclass
class GlobalCheckpointRecord:
    """Per-region pointer map forming one restorable global state."""
    record_id: int
    entries: dict[int, RegionEntry]

    def entry(self, region: int) -> RegionEntry:
        return self.entries[region]

    def checkpoint_ids(self) -> dict[int, int]:
        return {r: e.checkpoint_id for r, e in self.entries.items()}


class CheckpointRegistry:
    """
    Latest successful checkpoint per region plus the current restore target.

    Per-region checkpoint ids never decrease.
    """

    def __init__(self, regions: int):
        self.regions = regions
        self.latest: dict[int, RegionEntry] = {}
        self.restore_target: Optional[GlobalCheckpointRecord] = None
        self.log: list[dict[str, Any]] = []
        self._records = 0

    def seed_initial(self, region_tasks: dict[int, list[TaskId]],
                     source_tasks: set[TaskId]) -> None:
        """Job start is a consistent state: checkpoint 0, empty state, offset 0."""
        for region, tasks in region_tasks.items():
            self.latest[region] = RegionEntry(
                checkpoint_id=0,
                handles={t: None for t in tasks},
                offsets={t: 0 for t in tasks if t in source_tasks},
            )
        self.publish()

    def update(self, region: int, entry: RegionEntry) -> None:
        current = self.latest.get(region)
        if current is not None and entry.checkpoint_id < current.checkpoint_id:
            logger.warning(f"Ignoring stale checkpoint {entry.checkpoint_id} for region {region}")
            return
        self.latest[region] = entry

    def next_record_id(self) -> int:
        self._records += 1
        return self._records

    def publish(self, record: Optional[GlobalCheckpointRecord] = None) -> GlobalCheckpointRecord:
        if record is None:
            record = GlobalCheckpointRecord(self.next_record_id(), dict(self.latest))
        self.restore_target = record
        return record

    def latest_id(self, region: int) -> Optional[int]:
        entry = self.latest.get(region)
        return entry.checkpoint_id if entry is not None else None

    def dump_jsonl(self) -> str:
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in self.log)
