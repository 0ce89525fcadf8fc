"""
Dataflow Execution

Record-level machinery of a running job: source emission, polling with
barrier alignment, service, routing with backpressure, epoch fencing, drop
accounting, failure/cancel/restart primitives and lazy chunk fetching.
"""
from __future__ import annotations

import logging
from enum import Enum
from functools import partial
from typing import Callable, Iterable, Optional

import numpy as np

from ..checkpoint.lazy import LazyStateBackend, StateAccessError
from ..graph.models import ExecutionGraph, TaskId
from ..shuffle.router import Partitioner, ewma
from ..shuffle.strategies import StrategyKind
from .channel import Channel, SendOutcome
from .engine import Engine, EngineError
from .operators import JOIN_SWEEP_NS, JoinOperator, Operator, source_rid
from .records import LEDGER, SEEN, Barrier, Record
from .task import Cluster, OutputGate, SourceFeed, TaskRuntime, TaskState

logger = logging.getLogger(__name__)


class DropCategory(str, Enum):
    DOWN_CONSUMER = "down_consumer"
    PURGED_EPOCH = "purged_epoch"
    FAILED_INFLIGHT = "failed_inflight"
    REPLAY_DISCARD = "replay_discard"


LOSS_CATEGORIES = (DropCategory.DOWN_CONSUMER, DropCategory.PURGED_EPOCH,
                   DropCategory.FAILED_INFLIGHT)

SnapshotListener = Callable[[TaskRuntime, int, dict, int, Optional[int]], None]
ConsumeListener = Callable[[TaskRuntime, Record, int], None]
FetchLatency = Callable[[int], Optional[int]]


class Dataflow:
    """Physical tasks and channels of one job incarnation."""

    def __init__(
        self,
        engine: Engine,
        exec_graph: ExecutionGraph,
        operators: dict[str, Operator],
        feeds: dict[TaskId, SourceFeed],
        cluster: Cluster,
        service_ns: dict[str, int],
        capacity: int = 32,
        seed: int = 0,
        jitter: float = 0.0,
        jitter_rng: Optional[np.random.Generator] = None,
        chunks: int = 64,
    ):
        self.engine = engine
        self.graph = exec_graph
        self.cluster = cluster
        self.capacity = capacity
        self.jitter = jitter
        self.jitter_rng = jitter_rng
        self.replay_on_failure = True
        self.dead = False

        self.snapshot_listener: Optional[SnapshotListener] = None
        self.consume_listener: Optional[ConsumeListener] = None

        self.created = 0
        self.consumed = 0
        self.terminal_consumed = 0
        self.dropped: dict[DropCategory, int] = {c: 0 for c in DropCategory}
        self.inherent_misses = 0
        self.duplicates = 0
        self.load: dict[TaskId, float] = {}
        self._busy_mark: dict[TaskId, int] = {}

        self.tasks: dict[TaskId, TaskRuntime] = {}
        for task_id in exec_graph.tasks:
            op = operators[task_id.operator]
            task = TaskRuntime(task_id, op, exec_graph.placement[task_id],
                               service_ns.get(task_id.operator, 0), chunks=chunks)
            if task_id in feeds:
                task.feed = feeds[task_id]
                task.source_slot = len([t for t in self.tasks.values() if t.is_source])
            self.tasks[task_id] = task
            self.load[task_id] = 0.0
            self._busy_mark[task_id] = 0

        logical = exec_graph.logical
        self.channels: list[Channel] = []
        by_edge: dict[tuple[TaskId, int], dict[int, Channel]] = {}
        for spec in exec_graph.channels:
            edge = logical.edges[spec.edge]
            inbound = [i for i, e in enumerate(logical.edges) if e.target == edge.target]
            ch = Channel(spec.producer, spec.consumer, spec.edge, spec.descriptor,
                         capacity=capacity, side=inbound.index(spec.edge))
            consumer = self.tasks[spec.consumer]
            ch.on_push = partial(self._on_push, consumer)
            consumer.inputs.append(ch)
            by_edge.setdefault((spec.producer, spec.edge), {})[spec.consumer.index] = ch
            self.channels.append(ch)

        specs = logical.operator_map
        for task in self.tasks.values():
            for e, edge in enumerate(logical.edges):
                if edge.source != task.id.operator:
                    continue
                channels = by_edge.get((task.id, e), {})
                up = specs[edge.source].parallelism
                down = specs[edge.target].parallelism
                partitioner = Partitioner(edge.strategy, task.id.index, up, down, seed=seed)
                task.outputs.append(OutputGate(
                    edge=e,
                    partitioner=partitioner,
                    channels=channels,
                    ordered=[channels[i] for i in sorted(channels)],
                    needs_backlog=edge.strategy.kind == StrategyKind.BACKLOG_AWARE,
                    needs_load=edge.strategy.kind == StrategyKind.WEAKHASH,
                ))

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    def deploy_all(self) -> None:
        for task in self.tasks.values():
            task.transition(TaskState.DEPLOYING)

    def start_all(self) -> None:
        for task in self.tasks.values():
            self.start_task(task, bump_epoch=False)

    def start_task(self, task: TaskRuntime, bump_epoch: bool = True) -> None:
        if bump_epoch:
            task.epoch += 1
        task.transition(TaskState.RUNNING)
        for ch in task.inputs:
            ch.consumer_alive = True
        self._busy_mark[task.id] = task.busy_ns
        if task.pending and not task.blocked:
            self._flush(task)
        if not task.blocked:
            self._after_flush(task)
        if isinstance(task.operator, JoinOperator):
            self.engine.schedule(JOIN_SWEEP_NS, self._join_sweep, task, task.incarnation)

    def shutdown(self) -> None:
        """Retire this incarnation; in-flight work is replayed by its successor."""
        self.dead = True
        for task in self.tasks.values():
            self._discard_task(task, DropCategory.REPLAY_DISCARD)
            if task.state != TaskState.CANCELED:
                task.transition(TaskState.CANCELED)
        for ch in self.channels:
            dropped, _ = ch.clear()
            self._drop(DropCategory.REPLAY_DISCARD, dropped)

    # ------------------------------------------------------------------
    # Sources
    # ------------------------------------------------------------------

    def _schedule_emission(self, task: TaskRuntime) -> None:
        feed = task.feed
        if task.emit_scheduled or feed is None or task.next_offset >= feed.limit:
            return
        task.emit_scheduled = True
        due = feed.due(task.next_offset)
        self.engine.at(max(self.engine.now, due), self._source_tick, task, task.incarnation)

    def _source_tick(self, task: TaskRuntime, incarnation: int) -> None:
        if incarnation != task.incarnation:
            return
        task.emit_scheduled = False
        if not task.running or task.blocked:
            return
        feed = task.feed
        k = task.next_offset
        if k >= feed.limit:
            return
        now = self.engine.now
        record = Record(rid=source_rid(task.source_slot, k), key=feed.key(k), emit_ns=now,
                        event_ns=feed.due(k))
        task.next_offset = k + 1
        self.created += 1
        if not task.outputs:
            # a source without edges is its own terminal
            self.consumed += 1
            self.terminal_consumed += 1
            self._deliver(task, [record])
            if self.consume_listener is not None:
                self.consume_listener(task, record, now)
        for gate_index in range(len(task.outputs)):
            if gate_index:
                self.created += 1
            task.pending.append((gate_index, record if gate_index == 0 else record.derive()))
        self._flush(task)
        if not task.blocked:
            self._after_flush(task)

    def source_offsets(self) -> dict[TaskId, int]:
        return {t.id: t.next_offset for t in self.tasks.values() if t.is_source}

    def sources_done(self) -> bool:
        return all(t.next_offset >= t.feed.limit for t in self.tasks.values() if t.is_source)

    # ------------------------------------------------------------------
    # Output path
    # ------------------------------------------------------------------

    def _flush(self, task: TaskRuntime) -> None:
        while task.pending:
            gate_index, record = task.pending[0]
            outcome = self._send(task, task.outputs[gate_index], record)
            task.pending.popleft()
            if outcome == SendOutcome.BLOCKED:
                task.blocked = True
                task.block_token += 1
                return

    def _send(self, task: TaskRuntime, gate: OutputGate, record: Record) -> SendOutcome:
        backlogs = [c.backlog for c in gate.ordered] if gate.needs_backlog else None
        loads = [self.load[c.consumer] for c in gate.ordered] if gate.needs_load else None
        index = gate.partitioner.select(record.key, backlogs, loads)
        ch = gate.channels[index]
        record.epoch = task.epoch
        record.producer = task.id
        record.side = ch.side
        outcome = ch.send(record, self.engine.now, partial(self._on_unblock, task))
        if outcome == SendOutcome.DROPPED:
            self._drop(DropCategory.REPLAY_DISCARD if self.replay_on_failure
                       else DropCategory.DOWN_CONSUMER)
        else:
            self.tasks[ch.consumer].arrived += 1
        return outcome

    def _on_unblock(self, task: TaskRuntime) -> None:
        self.engine.schedule(0, self._resume, task, task.block_token)

    def _resume(self, task: TaskRuntime, token: int) -> None:
        if token != task.block_token or not task.blocked:
            return
        task.blocked = False
        if not task.running:
            return
        self._flush(task)
        if not task.blocked:
            self._after_flush(task)

    def _after_flush(self, task: TaskRuntime) -> None:
        if task.is_source:
            if task.pending_barrier is not None:
                cid = task.pending_barrier
                task.pending_barrier = None
                self._emit_source_barrier(task, cid)
            self._schedule_emission(task)
        if task.inputs:
            self._request_poll(task, self.engine.now)

    # ------------------------------------------------------------------
    # Input path
    # ------------------------------------------------------------------

    def _on_push(self, consumer: TaskRuntime, visible_at: int) -> None:
        if consumer.running and not consumer.busy and not consumer.blocked:
            self._request_poll(consumer, visible_at)

    def _request_poll(self, task: TaskRuntime, at: int) -> None:
        if task.poll_at is not None and task.poll_at <= at:
            return
        task.poll_at = at
        self.engine.at(at, self._poll, task, task.incarnation, at)

    def _poll(self, task: TaskRuntime, incarnation: int, at: int) -> None:
        if task.poll_at == at:
            task.poll_at = None
        if (incarnation != task.incarnation or not task.running or task.busy or task.blocked
                or task.awaiting_chunk):
            return
        now = self.engine.now
        n = len(task.inputs)
        earliest: Optional[int] = None
        scanned = 0
        while scanned < n:
            idx = (task.rr + scanned) % n
            if idx in task.aligned:
                scanned += 1
                continue
            ch = task.inputs[idx]
            item = ch.head(now)
            if item is None:
                visible = ch.next_visible_at()
                if visible is not None and visible > now:
                    earliest = visible if earliest is None else min(earliest, visible)
                scanned += 1
                continue
            if isinstance(item, Barrier):
                ch.take(now)
                self._on_barrier(task, idx, item)
                if not task.running:
                    return
                task.rr = idx
                scanned = 0
                continue
            if item.epoch < self.tasks[item.producer].epoch:
                ch.take(now)
                self._drop(DropCategory.PURGED_EPOCH)
                continue
            lazy = task.store.lazy
            if lazy is not None:
                missing = lazy.missing_chunks(task.operator.state_keys(item))
                if missing:
                    task.awaiting_chunk = True
                    self._fetch_chunks(task, missing)
                    return
            ch.take(now)
            task.rr = (idx + 1) % n
            self._start_service(task, item, ch)
            return
        if earliest is not None:
            self._request_poll(task, earliest)

    def _service_time(self, task: TaskRuntime) -> int:
        tm = self.cluster.tms.get(task.tm_id)
        factor = tm.speed_factor if tm is not None else 1.0
        service = task.service_ns * factor
        if self.jitter and self.jitter_rng is not None:
            service *= 1.0 + self.jitter_rng.uniform(-self.jitter, self.jitter)
        return max(0, int(service))

    def _start_service(self, task: TaskRuntime, record: Record, source: Channel) -> None:
        task.busy = True
        task.in_service = record
        task.in_service_from = source
        task.current_service_ns = self._service_time(task)
        self.engine.schedule(task.current_service_ns, self._complete, task, task.incarnation)

    def _complete(self, task: TaskRuntime, incarnation: int) -> None:
        if incarnation != task.incarnation:
            return
        record = task.in_service
        task.busy = False
        task.in_service = None
        task.in_service_from = None
        task.busy_ns += task.current_service_ns
        task.processed += 1
        self.consumed += 1
        now = self.engine.now
        try:
            outputs = task.operator.process(record, task.store, now)
        except StateAccessError as e:
            raise EngineError(str(e), now_ns=now) from e
        if task.terminal:
            self._deliver(task, outputs)
            self.terminal_consumed += 1
            if self.consume_listener is not None:
                self.consume_listener(task, record, now)
        else:
            for out in outputs:
                for gate_index in range(len(task.outputs)):
                    self.created += 1
                    task.pending.append((gate_index, out if gate_index == 0 else out.derive()))
            self._flush(task)
        if not task.blocked:
            self._request_poll(task, now)

    def _deliver(self, task: TaskRuntime, outputs: list[Record]) -> None:
        store = task.store
        for out in outputs:
            store.incr((LEDGER, out.key))
            if task.operator.track_duplicates:
                # delivered-output bookkeeping, not operator state: no residency gate
                seen = (SEEN, out.rid)
                if seen in store.data:
                    self.duplicates += 1
                else:
                    store.data[seen] = 1
                    store.dirty.add(seen)

    # ------------------------------------------------------------------
    # Barriers
    # ------------------------------------------------------------------

    def inject_barrier(self, task_id: TaskId, checkpoint_id: int) -> bool:
        """Start a checkpoint at a source; deferred while the source is blocked."""
        task = self.tasks[task_id]
        if not task.running or checkpoint_id <= task.fence_id:
            return False
        if task.blocked:
            task.pending_barrier = checkpoint_id
            return True
        self._emit_source_barrier(task, checkpoint_id)
        return True

    def _emit_source_barrier(self, task: TaskRuntime, checkpoint_id: int) -> None:
        if checkpoint_id <= task.fence_id:
            return
        task.fence_id = checkpoint_id
        self._snapshot_and_forward(task, checkpoint_id)

    def _on_barrier(self, task: TaskRuntime, idx: int, barrier: Barrier) -> None:
        cid = barrier.checkpoint_id
        if cid <= task.fence_id:
            return
        if task.aligning is not None and cid > task.aligning:
            logger.debug(f"{task.id} abandons alignment of {task.aligning} for {cid}")
            task.aligned.clear()
            task.aligning = None
        if task.aligning is None:
            task.aligning = cid
        elif cid < task.aligning:
            return
        task.aligned.add(idx)
        if len(task.aligned) == len(task.inputs):
            task.aligning = None
            task.aligned.clear()
            task.fence_id = cid
            self._snapshot_and_forward(task, cid)

    def _snapshot_and_forward(self, task: TaskRuntime, checkpoint_id: int) -> None:
        blob, changed = task.store.snapshot()
        offset = task.next_offset if task.is_source else None
        if self.snapshot_listener is not None:
            self.snapshot_listener(task, checkpoint_id, blob, changed, offset)
        now = self.engine.now
        barrier = Barrier(checkpoint_id)
        for gate in task.outputs:
            for ch in gate.ordered:
                ch.send_barrier(barrier, now)

    def abort_alignment(self, task_ids: Iterable[TaskId], checkpoint_id: int) -> None:
        """Give up on an attempt at these tasks; later barriers of it are ignored."""
        for task_id in task_ids:
            task = self.tasks[task_id]
            task.fence_id = max(task.fence_id, checkpoint_id)
            if task.pending_barrier is not None and task.pending_barrier <= checkpoint_id:
                task.pending_barrier = None
            if task.aligning is not None and task.aligning <= checkpoint_id:
                task.aligning = None
                task.aligned.clear()
                if task.running:
                    self._request_poll(task, self.engine.now)

    # ------------------------------------------------------------------
    # Failure, cancel, restart
    # ------------------------------------------------------------------

    def _drop(self, category: DropCategory, count: int = 1) -> None:
        if count:
            self.dropped[category] += count

    @property
    def failure_category(self) -> DropCategory:
        return (DropCategory.REPLAY_DISCARD if self.replay_on_failure
                else DropCategory.FAILED_INFLIGHT)

    def _discard_task(self, task: TaskRuntime, category: DropCategory) -> None:
        task.incarnation += 1
        task.block_token += 1
        dropped = len(task.pending) + (1 if task.in_service is not None else 0)
        task.pending.clear()
        task.in_service = None
        task.in_service_from = None
        task.busy = False
        task.blocked = False
        task.awaiting_chunk = False
        task.poll_at = None
        task.emit_scheduled = False
        task.pending_barrier = None
        task.aligning = None
        task.aligned.clear()
        for gate in task.outputs:
            for ch in gate.ordered:
                dropped += ch.discard_waiters()
        self._drop(category, dropped)

    def fail_tasks(self, task_ids: Iterable[TaskId],
                   preserve: Iterable[TaskId] = ()) -> list[TaskId]:
        """
        Fail tasks at the current instant.

        Preserved tasks (covered by a live standby) keep their queues and
        pending output; their in-service record returns to its channel head.
        """
        preserve = set(preserve)
        failed = []
        category = self.failure_category
        now = self.engine.now
        for task_id in task_ids:
            task = self.tasks[task_id]
            if task.state in (TaskState.FAILED, TaskState.CANCELED):
                continue
            failed.append(task_id)
            if task_id in preserve:
                if task.in_service is not None and task.in_service_from is not None:
                    task.in_service_from.push_front(task.in_service, now)
                task.in_service = None
                task.in_service_from = None
                task.busy = False
                task.incarnation += 1
                task.poll_at = None
                task.awaiting_chunk = False
                task.emit_scheduled = False
                task.transition(TaskState.FAILED)
                continue
            if task.terminal:
                task.delivered = (task.store.items_in(LEDGER) + task.store.items_in(SEEN))
            self._discard_task(task, category)
            task.transition(TaskState.FAILED)
            for ch in task.inputs:
                ch.consumer_alive = False
                dropped, callbacks = ch.clear()
                self._drop(category, dropped)
                for callback in callbacks:
                    callback()
        return failed

    def cancel_tasks(self, task_ids: Iterable[TaskId]) -> None:
        """Stop tasks for a restart; their in-flight work is replayed."""
        for task_id in task_ids:
            task = self.tasks[task_id]
            if task.state == TaskState.CANCELED:
                continue
            self._discard_task(task, DropCategory.REPLAY_DISCARD)
            task.transition(TaskState.CANCELED)
            for ch in task.inputs:
                ch.consumer_alive = False

    def reset_channels(self, task_ids: Iterable[TaskId]) -> int:
        """Clear every channel touching the given tasks; returns records discarded."""
        scope = set(task_ids)
        total = 0
        for ch in self.channels:
            if ch.producer in scope or ch.consumer in scope:
                dropped, callbacks = ch.clear()
                total += dropped
                for callback in callbacks:
                    callback()
        self._drop(DropCategory.REPLAY_DISCARD, total)
        return total

    def begin_recovery(self, task_id: TaskId, fence_id: int) -> TaskRuntime:
        task = self.tasks[task_id]
        if task.state == TaskState.RUNNING:
            self.cancel_tasks([task_id])
        task.transition(TaskState.RECOVERING)
        task.incarnation += 1
        task.fence_id = max(task.fence_id, fence_id)
        task.aligning = None
        task.aligned.clear()
        return task

    def restore_task(self, task: TaskRuntime, blob: dict, offset: Optional[int],
                     lazy: Optional[LazyStateBackend] = None, keep_delivered: bool = False) -> None:
        task.store.restore(blob, lazy)
        if keep_delivered and task.delivered:
            for key, value in task.delivered:
                task.store.data[key] = value
        task.delivered = []
        if task.is_source and offset is not None:
            task.next_offset = offset

    def move_task(self, task: TaskRuntime, tm_id: str) -> None:
        task.tm_id = tm_id

    def terminate(self) -> None:
        """Stop every task for good (job termination by the HA layer)."""
        for task in self.tasks.values():
            if task.state not in (TaskState.CANCELED,):
                self._discard_task(task, DropCategory.FAILED_INFLIGHT)
                if task.state == TaskState.CREATED:
                    task.transition(TaskState.DEPLOYING)
                task.transition(TaskState.CANCELED)
        for ch in self.channels:
            dropped, _ = ch.clear()
            self._drop(DropCategory.FAILED_INFLIGHT, dropped)
        self.dead = True

    # ------------------------------------------------------------------
    # Lazy chunks
    # ------------------------------------------------------------------

    def begin_lazy_fetch(self, task: TaskRuntime, fetch_latency: FetchLatency,
                         retry_ns: int = 1_000_000_000) -> None:
        task.fetch_latency = fetch_latency
        task.fetch_retry_ns = retry_ns
        self._prefetch_next(task, task.incarnation)

    def _prefetch_next(self, task: TaskRuntime, incarnation: int) -> None:
        lazy = task.store.lazy
        if incarnation != task.incarnation or lazy is None:
            return
        chunk = lazy.next_prefetch()
        if chunk is None:
            return
        self._fetch(task, chunk, background=True)

    def _fetch_chunks(self, task: TaskRuntime, chunks: list[int]) -> None:
        lazy = task.store.lazy
        for chunk in chunks:
            if chunk not in lazy.in_flight:
                self._fetch(task, chunk, background=False)

    def _fetch(self, task: TaskRuntime, chunk: int, background: bool) -> None:
        lazy = task.store.lazy
        latency = task.fetch_latency(lazy.chunk_bytes[chunk])
        lazy.in_flight.add(chunk)
        if latency is None:
            # store unavailable: retry later
            self.engine.schedule(task.fetch_retry_ns, self._retry_fetch, task, task.incarnation,
                                 chunk, background)
            return
        self.engine.schedule(latency, self._chunk_arrived, task, task.incarnation, chunk,
                             background)

    def _retry_fetch(self, task: TaskRuntime, incarnation: int, chunk: int,
                     background: bool) -> None:
        lazy = task.store.lazy
        if incarnation != task.incarnation or lazy is None:
            return
        lazy.in_flight.discard(chunk)
        if not lazy.resident[chunk]:
            self._fetch(task, chunk, background)

    def _chunk_arrived(self, task: TaskRuntime, incarnation: int, chunk: int,
                       background: bool) -> None:
        lazy = task.store.lazy
        if incarnation != task.incarnation or lazy is None:
            return
        lazy.mark_resident(chunk)
        if background:
            self._prefetch_next(task, incarnation)
        task.store.settle()
        if task.awaiting_chunk:
            task.awaiting_chunk = False
            if task.running:
                self._request_poll(task, self.engine.now)

    # ------------------------------------------------------------------
    # Housekeeping and accounting
    # ------------------------------------------------------------------

    def _join_sweep(self, task: TaskRuntime, incarnation: int) -> None:
        if incarnation != task.incarnation or not task.running:
            return
        self.inherent_misses += task.operator.sweep(task.store, self.engine.now)
        self.engine.schedule(JOIN_SWEEP_NS, self._join_sweep, task, incarnation)

    def sample_loads(self, interval_ns: int) -> None:
        """Refresh per-task busy-fraction EWMAs (WeakHash load estimates)."""
        for task in self.tasks.values():
            busy = task.busy_ns - self._busy_mark[task.id]
            self._busy_mark[task.id] = task.busy_ns
            fraction = min(1.0, busy / interval_ns) if interval_ns > 0 else 0.0
            self.load[task.id] = ewma(self.load[task.id], fraction)

    def in_flight(self) -> int:
        queued = sum(ch.backlog + len(ch.waiters) for ch in self.channels)
        held = sum(len(t.pending) + (1 if t.in_service is not None else 0)
                   for t in self.tasks.values())
        return queued + held

    @property
    def dropped_loss(self) -> int:
        return sum(self.dropped[c] for c in LOSS_CATEGORIES)

    def conservation_gap(self) -> int:
        """created - (consumed + in flight + dropped); zero at every instant."""
        return self.created - (self.consumed + self.in_flight() + sum(self.dropped.values()))

    def ledger(self) -> dict[int, int]:
        """Per-key output counts summed over terminal tasks."""
        totals: dict[int, int] = {}
        for task in self.tasks.values():
            if not task.terminal:
                continue
            for (_, key), count in task.store.items_in(LEDGER):
                totals[key] = totals.get(key, 0) + count
        return totals

    def backlog_by_operator(self) -> dict[str, int]:
        result: dict[str, int] = {}
        for ch in self.channels:
            result[ch.consumer.operator] = result.get(ch.consumer.operator, 0) + ch.backlog
        return result
