"""
Checkpoint Coordinator

Periodic barrier-based checkpointing in global or region mode. Attempts are
event-driven state machines inside the engine: barriers are injected at the
sources, every task's snapshot upload is scheduled on the store, and the
attempt finalizes exactly once, on full resolution or at its deadline.
"""
from __future__ import annotations

import logging
from functools import partial
from typing import TYPE_CHECKING, Any, Callable, Optional

from ..graph.models import RegionPartition, TaskId
from .merge import MergeError, merge_region_checkpoints
from .models import (
    CheckpointAttempt,
    CheckpointMode,
    CheckpointRegistry,
    Outcome,
    RegionEntry,
    SnapshotHandle,
    TaskAck,
    TaskStatus,
)
from .store import SnapshotStore, StoreUnavailable

if TYPE_CHECKING:
    from ..runtime.dataflow import Dataflow
    from ..runtime.engine import Engine
    from ..runtime.task import TaskRuntime

logger = logging.getLogger(__name__)

FinalizeListener = Callable[[CheckpointAttempt], None]


class CheckpointCoordinator:
    """Triggers, tracks and finalizes checkpoint attempts for one job."""

    def __init__(
        self,
        engine: Engine,
        dataflow: Dataflow,
        regions: RegionPartition,
        registry: CheckpointRegistry,
        store: SnapshotStore,
        mode: CheckpointMode = CheckpointMode.GLOBAL,
        interval_ns: int = 30_000_000_000,
        deadline_ns: Optional[int] = None,
        max_concurrent: int = 1,
        full_every: int = 10,
        bytes_per_entry: int = 32,
        max_region_lag: Optional[int] = None,
    ):
        self.engine = engine
        self.dataflow = dataflow
        self.regions = regions
        self.registry = registry
        self.store = store
        self.mode = mode
        self.interval_ns = interval_ns
        self.deadline_ns = deadline_ns if deadline_ns is not None else interval_ns
        self.max_concurrent = max_concurrent
        self.full_every = full_every
        self.bytes_per_entry = bytes_per_entry
        self.max_region_lag = max_region_lag

        self.jm_alive = True
        self.stopped = False
        self.active: dict[int, CheckpointAttempt] = {}
        self.finished: list[CheckpointAttempt] = []
        self.listeners: list[FinalizeListener] = []
        self.skipped = 0
        self.merge_errors: list[str] = []

        self._next_id = 1
        self._last_handle: dict[TaskId, SnapshotHandle] = {}
        self._since_full: dict[TaskId, int] = {}
        self._force_full: set[int] = set()

        dataflow.snapshot_listener = self._on_snapshot

    # ------------------------------------------------------------------
    # Triggering
    # ------------------------------------------------------------------

    def start(self, first_at_ns: Optional[int] = None) -> None:
        """Schedule the periodic trigger; the first fires one interval after start."""
        delay = self.interval_ns if first_at_ns is None else max(0, first_at_ns - self.engine.now)
        self.engine.schedule(delay, self._tick)

    @property
    def last_id(self) -> int:
        """Id of the newest attempt ever triggered (0 before the first)."""
        return self._next_id - 1

    def stop(self) -> None:
        self.stopped = True

    def _tick(self) -> None:
        if self.stopped:
            return
        self.trigger_checkpoint()
        self.engine.schedule(self.interval_ns, self._tick)

    def trigger_checkpoint(self, full: bool = False) -> Optional[CheckpointAttempt]:
        """
        Start a new attempt, or return None when it has to be skipped
        (JobManager down, or max_concurrent attempts already in flight).

        `full` forces full snapshots (savepoint).
        """
        if not self.jm_alive or len(self.active) >= self.max_concurrent:
            self.skipped += 1
            logger.debug(f"Checkpoint trigger skipped at {self.engine.now} "
                         f"(jm_alive={self.jm_alive}, active={len(self.active)})")
            return None

        now = self.engine.now
        cid = self._next_id
        self._next_id += 1
        attempt = CheckpointAttempt(
            id=cid,
            mode=self.mode,
            trigger_time=now,
            deadline=now + self.deadline_ns,
            statuses={t: TaskAck() for t in self.dataflow.tasks},
        )
        self.active[cid] = attempt
        if full:
            self._force_full.add(cid)
        self.engine.schedule(self.deadline_ns, self._on_deadline, cid)

        if not self.store.available:
            for task_id in attempt.statuses:
                attempt.fail(task_id, "store_unavailable")
            self._finalize(attempt)
            return attempt

        for task in self.dataflow.tasks.values():
            if not task.running:
                attempt.fail(task.id, "not_running")
        if self._maybe_finalize(attempt):
            return attempt

        for task in self.dataflow.tasks.values():
            if task.is_source and task.running:
                if not self.dataflow.inject_barrier(task.id, cid):
                    attempt.fail(task.id, "barrier_rejected")
            if cid not in self.active:
                break
        self._maybe_finalize(attempt)
        return attempt

    # ------------------------------------------------------------------
    # Snapshots and uploads
    # ------------------------------------------------------------------

    def _make_handle(self, task: TaskRuntime, cid: int, blob: dict, changed: int) -> SnapshotHandle:
        previous = self._last_handle.get(task.id)
        since_full = self._since_full.get(task.id, 0)
        full = (previous is None or cid in self._force_full
                or since_full + 1 >= self.full_every)
        entries = len(blob) if full else changed
        return SnapshotHandle(
            task=task.id,
            checkpoint_id=cid,
            store_key=f"chk-{cid}/{task.id}",
            size=entries * self.bytes_per_entry,
            base=None if full else previous,
        )

    def _on_snapshot(self, task: TaskRuntime, cid: int, blob: dict, changed: int,
                     offset: Optional[int]) -> None:
        attempt = self.active.get(cid)
        if attempt is None or attempt.statuses[task.id].status != TaskStatus.PENDING:
            return
        handle = self._make_handle(task, cid, blob, changed)
        try:
            self.store.put(handle.store_key, blob, handle.size,
                           on_done=partial(self._on_uploaded, cid, handle, offset))
        except StoreUnavailable:
            self.task_failed(task.id, "store_unavailable")

    def _on_uploaded(self, cid: int, handle: SnapshotHandle, offset: Optional[int],
                     ok: bool) -> None:
        task_id = handle.task
        previous = self._last_handle.get(task_id)
        if previous is None or handle.checkpoint_id > previous.checkpoint_id:
            self._last_handle[task_id] = handle
            since = self._since_full.get(task_id, 0) + 1
            self._since_full[task_id] = 0 if handle.is_full else since
        attempt = self.active.get(cid)
        if attempt is None:
            return
        if ok:
            attempt.ack(task_id, handle, offset)
        else:
            attempt.fail(task_id, "upload_failed")
        self._maybe_finalize(attempt)

    def task_failed(self, task_id: TaskId, cause: str = "task_failed") -> None:
        """A task failed while attempts were in flight."""
        for attempt in list(self.active.values()):
            attempt.fail(task_id, cause)
            self._maybe_finalize(attempt)

    def _on_deadline(self, cid: int) -> None:
        attempt = self.active.get(cid)
        if attempt is None:
            return
        for task_id, ack in attempt.statuses.items():
            if ack.status == TaskStatus.PENDING:
                attempt.fail(task_id, "timeout")
        self._finalize(attempt)

    # ------------------------------------------------------------------
    # Finalization
    # ------------------------------------------------------------------

    def _region_resolved(self, attempt: CheckpointAttempt, region: int) -> bool:
        tasks = self.regions.tasks_in(region)
        return attempt.any_failed(tasks) or attempt.all_acked(tasks)

    def _maybe_finalize(self, attempt: CheckpointAttempt) -> bool:
        if attempt.finalized:
            return True
        if self.mode == CheckpointMode.GLOBAL:
            done = attempt.any_failed(attempt.statuses) or attempt.all_acked()
        else:
            done = all(self._region_resolved(attempt, r) for r in range(len(self.regions)))
        if done:
            self._finalize(attempt)
        return done

    def _region_entry(self, attempt: CheckpointAttempt, region: int) -> RegionEntry:
        tasks = sorted(self.regions.tasks_in(region))
        return RegionEntry(
            checkpoint_id=attempt.id,
            handles={t: attempt.statuses[t].handle for t in tasks},
            offsets={t: attempt.statuses[t].offset for t in tasks
                     if attempt.statuses[t].offset is not None},
        )

    def _finalize(self, attempt: CheckpointAttempt) -> None:
        if attempt.finalized:
            return
        attempt.finalized = True
        attempt.finished_at = self.engine.now
        self.active.pop(attempt.id, None)
        self._force_full.discard(attempt.id)

        region_ok = {r: attempt.all_acked(self.regions.tasks_in(r))
                     for r in range(len(self.regions))}
        if self.mode == CheckpointMode.GLOBAL:
            success = all(region_ok.values())
            attempt.region_status = {r: success for r in region_ok}
            if success:
                for r in region_ok:
                    self.registry.update(r, self._region_entry(attempt, r))
                self.registry.publish()
                attempt.outcome = Outcome.SUCCEEDED
            else:
                attempt.outcome = Outcome.FAILED
        else:
            attempt.region_status = dict(region_ok)
            outcomes = {r: self._region_entry(attempt, r) if ok else None
                        for r, ok in region_ok.items()}
            succeeded = sum(region_ok.values())
            if succeeded:
                try:
                    merge_region_checkpoints(outcomes, self.registry, current_id=attempt.id,
                                             max_region_lag=self.max_region_lag)
                except MergeError as e:
                    logger.warning(f"Checkpoint {attempt.id}: merge refused ({e})")
                    self.merge_errors.append(e.kind)
            if succeeded == len(region_ok):
                attempt.outcome = Outcome.SUCCEEDED
            elif succeeded:
                attempt.outcome = Outcome.PARTIAL
            else:
                attempt.outcome = Outcome.FAILED

        failed_tasks = [t for r, ok in attempt.region_status.items() if not ok
                        for t in self.regions.tasks_in(r)]
        if failed_tasks:
            self.dataflow.abort_alignment(failed_tasks, attempt.id)

        self.registry.log.append(self._log_line(attempt))
        self.finished.append(attempt)
        logger.debug(f"Checkpoint {attempt.id} {attempt.outcome.value} at {attempt.finished_at}")
        for listener in self.listeners:
            listener(attempt)

    def _log_line(self, attempt: CheckpointAttempt) -> dict[str, Any]:
        per_region = {}
        for r, ok in attempt.region_status.items():
            latest = self.registry.latest_id(r)
            per_region[str(r)] = {"id": latest, "status": "succeeded" if ok else "failed"}
        causes: dict[str, int] = {}
        for ack in attempt.statuses.values():
            if ack.cause:
                causes[ack.cause] = causes.get(ack.cause, 0) + 1
        return {
            "id": attempt.id,
            "mode": attempt.mode.value,
            "outcome": attempt.outcome.value,
            "per_region": per_region,
            "trigger_ns": attempt.trigger_time,
            "duration_ns": attempt.finished_at - attempt.trigger_time,
            "causes": causes,
        }

    # ------------------------------------------------------------------
    # Statistics
    # ------------------------------------------------------------------

    def stats(self) -> dict[str, Any]:
        outcomes = {o.value: 0 for o in Outcome}
        region_total = 0
        region_ok = 0
        for attempt in self.finished:
            outcomes[attempt.outcome.value] += 1
            region_total += len(attempt.region_status)
            region_ok += sum(attempt.region_status.values())
        attempts = len(self.finished)
        return {
            "attempts": attempts,
            "skipped": self.skipped,
            "outcomes": outcomes,
            "success_rate": outcomes[Outcome.SUCCEEDED.value] / attempts if attempts else 0.0,
            "region_success_rate": region_ok / region_total if region_total else 0.0,
            "merge_errors": len(self.merge_errors),
        }
