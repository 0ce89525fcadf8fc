"""
Recovery Execution

Drives failures through detection, restart delay, slot allocation,
deployment, state restore and restart as engine events. Each plan runs as a
generation; a later plan that touches the same tasks absorbs the earlier one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional

from ..checkpoint.restore import RestoreMode, RestorePlan, backoff_ns, restore_state
from ..checkpoint.store import StoreUnavailable
from ..control.leader import TerminateJobs
from ..graph.models import RegionPartition, TaskId
from ..runtime.engine import NS_PER_S
from .models import (
    FailureEvent,
    FailureScope,
    RecoveryPlan,
    RecoveryReport,
    RecoveryStrategy,
    SwitchReport,
)
from .planner import plan_recovery
from .replication import promote_standby, standby_alive

if TYPE_CHECKING:
    from ..checkpoint.coordinator import CheckpointCoordinator
    from ..checkpoint.models import CheckpointRegistry
    from ..checkpoint.store import SnapshotStore
    from ..control.leader import LeaderService
    from ..control.models import ClusterModel
    from ..runtime.dataflow import Dataflow
    from ..runtime.engine import Engine
    from ..runtime.task import Cluster

logger = logging.getLogger(__name__)


@dataclass
class _Recovery:
    gen: int
    plan: RecoveryPlan
    tasks: list[TaskId]
    failure_time: int
    loss_before: int
    offsets_before: dict[TaskId, int]
    restored: dict[TaskId, tuple[RestorePlan, Optional[int]]] = field(default_factory=dict)
    moved: int = 0
    rpc_count: int = 0


class RecoveryManager:
    """Failure handling for one job."""

    def __init__(
        self,
        engine: "Engine",
        dataflow: "Dataflow",
        cluster: "Cluster",
        regions: RegionPartition,
        registry: "CheckpointRegistry",
        store: "SnapshotStore",
        deploy_model: "ClusterModel",
        coordinator: Optional["CheckpointCoordinator"] = None,
        strategy: RecoveryStrategy = RecoveryStrategy.REGION,
        gamma: str = "full",
        detection_ns: int = 500_000_000,
        restart_delay_ns: int = NS_PER_S,
        restore_mode: RestoreMode = RestoreMode.EAGER,
        chunks: int = 64,
        batched_deploy: bool = True,
        backoff_base_ns: int = NS_PER_S,
        backoff_cap_ns: int = 60 * NS_PER_S,
        active_standby: bool = False,
        standby_lag_records: int = 0,
        leader: Optional["LeaderService"] = None,
        jm_failover_ns: int = 5 * NS_PER_S,
    ):
        self.engine = engine
        self.dataflow = dataflow
        self.cluster = cluster
        self.regions = regions
        self.registry = registry
        self.store = store
        self.deploy_model = deploy_model
        self.coordinator = coordinator
        self.strategy = RecoveryStrategy(strategy)
        self.gamma = gamma
        self.detection_ns = detection_ns
        self.restart_delay_ns = restart_delay_ns
        self.restore_mode = RestoreMode(restore_mode)
        self.chunks = chunks
        self.batched_deploy = batched_deploy
        self.backoff_base_ns = backoff_base_ns
        self.backoff_cap_ns = backoff_cap_ns
        self.active_standby = active_standby
        self.standby_lag_records = standby_lag_records
        self.leader = leader
        self.jm_failover_ns = jm_failover_ns

        dataflow.replay_on_failure = self.strategy != RecoveryStrategy.SINGLE_TASK

        self.reports: list[RecoveryReport] = []
        self.switches: list[SwitchReport] = []
        self.terminated = False
        self.restore_retries = 0
        self._active: dict[int, _Recovery] = {}
        self._gen = 0
        self._jm_down_since: Optional[int] = None

    # ------------------------------------------------------------------
    # Failure entry points
    # ------------------------------------------------------------------

    def kill_tm(self, tm_id: str, cause: str = "KillTM") -> list[TaskId]:
        tasks = self.cluster.kill(tm_id)
        if tasks:
            self._on_failure(FailureEvent(self.engine.now, FailureScope.TM, tm_id, cause, tasks))
        return tasks

    def fail_task(self, task_id: TaskId, cause: str = "task_failure") -> None:
        self._on_failure(
            FailureEvent(self.engine.now, FailureScope.TASK, task_id, cause, [task_id]))

    def _on_failure(self, event: FailureEvent) -> None:
        if self.terminated:
            return
        loss_before = self.dataflow.dropped_loss
        standby = set()
        if self.active_standby:
            standby = {t for t in event.tasks
                       if standby_alive(self.dataflow, self.cluster, t)}
        failed = self.dataflow.fail_tasks(event.tasks, preserve=standby)
        if not failed:
            return
        if self.coordinator is not None:
            for task_id in failed:
                self.coordinator.task_failed(task_id, event.cause or "task_failed")
        logger.info(f"Failure {event.scope.value} {event.target} at {event.time_ns}: "
                    f"{len(failed)} tasks down")
        event.tasks = failed
        promote = [t for t in failed if t in standby]
        passive = [t for t in failed if t not in standby]
        if promote:
            lag_ns = max(self.standby_lag_records * self.dataflow.tasks[t].service_ns
                         for t in promote)
            self.engine.schedule(self.detection_ns + lag_ns, self._promote, event, promote,
                                 loss_before)
        if passive:
            self.engine.schedule(self.detection_ns, self._detected, event, passive, loss_before)

    def _promote(self, event: FailureEvent, tasks: list[TaskId], loss_before: int) -> None:
        fallback = []
        for task_id in tasks:
            report = promote_standby(self.dataflow, self.cluster, task_id, self.detection_ns,
                                     self.standby_lag_records)
            self.switches.append(report)
            if report.fallback:
                fallback.append(task_id)
        promoted = [t for t in tasks if t not in fallback]
        if promoted:
            self._record(RecoveryReport(
                time_ns=event.time_ns,
                scope=event.scope,
                strategy="active_standby",
                tasks=promoted,
                recovery_time_ns=self.engine.now - event.time_ns,
                dropped=self.dataflow.dropped_loss - loss_before,
                moved=len(promoted),
            ))
        if fallback:
            self._detected(event, fallback, loss_before)

    def _detected(self, event: FailureEvent, tasks: list[TaskId], loss_before: int) -> None:
        if self.terminated:
            return
        failure = FailureEvent(event.time_ns, event.scope, event.target, event.cause, tasks)
        plan = plan_recovery(failure, self.strategy, self.regions, self.registry, self.gamma,
                             self.dataflow.source_offsets())
        self.execute_plan(plan, loss_before)

    # ------------------------------------------------------------------
    # Plan execution
    # ------------------------------------------------------------------

    def execute_plan(self, plan: RecoveryPlan, loss_before: Optional[int] = None) -> int:
        """Start executing a plan; returns its generation."""
        self._gen += 1
        gen = self._gen
        tasks = set(plan.tasks_to_restart)
        failure_time = plan.failure.time_ns
        if loss_before is None:
            loss_before = self.dataflow.dropped_loss
        offsets = self.dataflow.source_offsets()
        offsets_before = {t: offsets[t] for t in tasks if t in offsets}
        for other_gen, other in list(self._active.items()):
            if tasks & set(other.tasks):
                tasks |= set(other.tasks)
                failure_time = min(failure_time, other.failure_time)
                loss_before = min(loss_before, other.loss_before)
                for t, offset in other.offsets_before.items():
                    offsets_before[t] = max(offsets_before.get(t, 0), offset)
                del self._active[other_gen]
                logger.debug(f"Recovery {gen} absorbs recovery {other_gen}")

        order = {t: i for i, t in enumerate(self.dataflow.tasks)}
        rec = _Recovery(gen, plan, sorted(tasks, key=order.__getitem__), failure_time,
                        loss_before, offsets_before)
        self._active[gen] = rec

        fence = self.coordinator.last_id if self.coordinator is not None else 0
        for task_id in rec.tasks:
            if self.coordinator is not None:
                self.coordinator.task_failed(task_id, "restarting")
            self.dataflow.begin_recovery(task_id, fence)
        if self.strategy != RecoveryStrategy.SINGLE_TASK:
            self.dataflow.reset_channels(rec.tasks)
        self.engine.schedule(self.restart_delay_ns, self._allocate, gen)
        return gen

    def _current(self, gen: int) -> Optional[_Recovery]:
        if self.terminated:
            return None
        return self._active.get(gen)

    def _allocate(self, gen: int) -> None:
        rec = self._current(gen)
        if rec is None:
            return
        now = self.engine.now
        homeless = [t for t in rec.tasks
                    if not self.cluster.tms.get(self.dataflow.tasks[t].tm_id)
                    or not self.cluster.tms[self.dataflow.tasks[t].tm_id].alive]
        ready_at = now
        if homeless:
            requested = self.cluster.requested
            placements = self.cluster.acquire(homeless, now)
            if self.cluster.requested > requested:
                logger.warning(f"Spare pool exhausted: requested "
                               f"{self.cluster.requested - requested} fresh TMs")
            for task_id, (tm_id, ready) in placements.items():
                self.dataflow.move_task(self.dataflow.tasks[task_id], tm_id)
                ready_at = max(ready_at, ready)
            rec.moved = len(homeless)
        self.engine.schedule(ready_at - now, self._deploy, gen)

    def _deploy(self, gen: int) -> None:
        rec = self._current(gen)
        if rec is None:
            return
        tms = {self.dataflow.tasks[t].tm_id for t in rec.tasks}
        cost, rpcs = self.deploy_model.deploy_ns(len(rec.tasks), len(tms), self.batched_deploy)
        rec.rpc_count = rpcs
        self.engine.schedule(cost, self._restore, gen)

    def _restore(self, gen: int) -> None:
        rec = self._current(gen)
        if rec is None:
            return
        for task_id in rec.tasks:
            self._restore_task(gen, task_id, 0)

    def _restore_task(self, gen: int, task_id: TaskId, attempt: int) -> None:
        rec = self._current(gen)
        if rec is None:
            return
        record = self.registry.restore_target
        entry = record.entry(self.regions.region_of(task_id)) if record is not None else None
        handle = entry.handles.get(task_id) if entry is not None else None
        offset = entry.offsets.get(task_id, 0) if entry is not None else 0
        try:
            plan = restore_state(handle, self.store, self.restore_mode, self.chunks)
        except StoreUnavailable:
            delay = backoff_ns(attempt, self.backoff_base_ns, self.backoff_cap_ns)
            self.restore_retries += 1
            logger.warning(f"Restore of {task_id} failed: store unavailable, retrying in "
                           f"{delay / NS_PER_S:.0f} s")
            self.engine.schedule(delay, self._restore_task, gen, task_id, attempt + 1)
            return
        task = self.dataflow.tasks[task_id]
        if self.strategy == RecoveryStrategy.SINGLE_TASK or not task.is_source:
            offset = None
        self.engine.schedule(plan.resume_after_ns, self._restored, gen, task_id, plan, offset)

    def _restored(self, gen: int, task_id: TaskId, plan: RestorePlan,
                  offset: Optional[int]) -> None:
        rec = self._current(gen)
        if rec is None:
            return
        rec.restored[task_id] = (plan, offset)
        if self.strategy == RecoveryStrategy.SINGLE_TASK:
            self._start(rec, task_id)
            if len(rec.restored) == len(rec.tasks):
                self._complete(rec)
            return
        # the whole scope restarts together so no producer sends into a cancelled consumer
        if len(rec.restored) == len(rec.tasks):
            for t in rec.tasks:
                self._start(rec, t)
            self._complete(rec)

    def _start(self, rec: _Recovery, task_id: TaskId) -> None:
        plan, offset = rec.restored[task_id]
        task = self.dataflow.tasks[task_id]
        self.dataflow.restore_task(task, plan.blob, offset, plan.backend,
                                   keep_delivered=self.strategy == RecoveryStrategy.SINGLE_TASK)
        self.dataflow.start_task(task)
        if plan.backend is not None:
            self.dataflow.begin_lazy_fetch(task, self.store.get_latency, self.backoff_base_ns)

    def _complete(self, rec: _Recovery) -> None:
        self._active.pop(rec.gen, None)
        replayed = 0
        for task_id, (_, offset) in rec.restored.items():
            if offset is not None and task_id in rec.offsets_before:
                replayed += max(0, rec.offsets_before[task_id] - offset)
        report = RecoveryReport(
            time_ns=rec.failure_time,
            scope=rec.plan.failure.scope,
            strategy=self.strategy.value,
            tasks=list(rec.tasks),
            recovery_time_ns=self.engine.now - rec.failure_time,
            dropped=self.dataflow.dropped_loss - rec.loss_before,
            replayed=replayed,
            moved=rec.moved,
            rpc_count=rec.rpc_count,
        )
        self._record(report)

    def _record(self, report: RecoveryReport) -> None:
        self.reports.append(report)
        logger.info(f"Recovered {len(report.tasks)} tasks ({report.strategy}) in "
                    f"{report.recovery_time_ns / NS_PER_S:.3f} s, dropped {report.dropped}, "
                    f"replayed {report.replayed}")

    @property
    def in_progress(self) -> bool:
        return bool(self._active) or self._jm_down_since is not None

    # ------------------------------------------------------------------
    # JobManager failover and lease checks
    # ------------------------------------------------------------------

    def kill_jm(self, cause: str = "KillJM") -> None:
        if self.terminated or self._jm_down_since is not None:
            return
        self._jm_down_since = self.engine.now
        if self.coordinator is not None:
            self.coordinator.jm_alive = False
        logger.info(f"JobManager down at {self.engine.now}")
        self.engine.schedule(self.jm_failover_ns, self._jm_failover, cause)

    def _jm_failover(self, cause: str) -> None:
        down_since = self._jm_down_since
        self._jm_down_since = None
        if self.terminated or down_since is None:
            return
        if self.leader is not None:
            self.leader.elect(f"jm-{self.leader.term + 1}", self.engine.now)
            if not self._lease_ok():
                return
        if self.coordinator is not None:
            self.coordinator.jm_alive = True
        self._record(RecoveryReport(
            time_ns=down_since,
            scope=FailureScope.JM,
            strategy="leader_failover",
            tasks=[],
            recovery_time_ns=self.engine.now - down_since,
        ))

    def start_lease_checks(self, interval_ns: int) -> None:
        self.engine.schedule(interval_ns, self._lease_tick, interval_ns)

    def _lease_tick(self, interval_ns: int) -> None:
        if self.terminated or self.leader is None:
            return
        if self._lease_ok():
            self.engine.schedule(interval_ns, self._lease_tick, interval_ns)

    def _lease_ok(self) -> bool:
        outcome = self.leader.check()
        if isinstance(outcome, TerminateJobs):
            self.terminate(outcome.reason)
            return False
        return True

    def terminate(self, reason: str) -> None:
        """Stop the job for good."""
        if self.terminated:
            return
        self.terminated = True
        self._active.clear()
        if self.coordinator is not None:
            self.coordinator.stop()
        self.dataflow.terminate()
        logger.warning(f"Job terminated at {self.engine.now}: {reason}")

    def log_lines(self) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.reports]
