"""
Tests for checkpointing: attempts, registry and merge, keyed state with lazy
residency, restore plans, the snapshot store and coordinator runs.
"""
from __future__ import annotations

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings as hsettings

from packages.core.bench.simulation import JobSimulation
from packages.core.checkpoint import (
    CheckpointAttempt,
    CheckpointMode,
    CheckpointRegistry,
    KeyedStateStore,
    LazyStateBackend,
    MergeError,
    Outcome,
    RegionEntry,
    RestoreMode,
    SnapshotHandle,
    SnapshotStore,
    StateAccessError,
    StoreUnavailable,
    TaskAck,
    TaskStatus,
    backoff_ns,
    chunk_of,
    expected_region_lag,
    merge_region_checkpoints,
    predict_global_success,
    restore_state,
    simulate_global_success,
    simulate_region_lag,
    simulate_region_success,
)
from packages.core.graph.models import TaskId
from packages.core.runtime.engine import Engine

from .conftest import make_config

A0, A1 = TaskId("a", 0), TaskId("a", 1)


def _entry(cid: int, tasks=(A0,)) -> RegionEntry:
    return RegionEntry(checkpoint_id=cid, handles={t: None for t in tasks}, offsets={})


# ============================================================================
# Models
# ============================================================================

class TestSnapshotHandle:
    def test_incremental_chain_ends_at_full(self):
        full = SnapshotHandle(A0, 1, "chk-1/a[0]", size=100)
        d1 = SnapshotHandle(A0, 2, "chk-2/a[0]", size=10, base=full)
        d2 = SnapshotHandle(A0, 3, "chk-3/a[0]", size=5, base=d1)

        assert [h.checkpoint_id for h in d2.chain()] == [3, 2, 1]
        assert d2.chain()[-1].is_full
        assert not d2.is_full
        assert d2.chain_bytes == 115


class TestCheckpointAttempt:
    def _attempt(self) -> CheckpointAttempt:
        return CheckpointAttempt(1, CheckpointMode.GLOBAL, 0, 10,
                                 statuses={A0: TaskAck(), A1: TaskAck()})

    def test_first_resolution_wins(self):
        attempt = self._attempt()
        attempt.fail(A0, "timeout")
        attempt.ack(A0, SnapshotHandle(A0, 1, "k", 0), None)

        assert attempt.statuses[A0].status == TaskStatus.FAILED
        assert attempt.statuses[A0].cause == "timeout"
        assert not attempt.resolved

    def test_resolution(self):
        attempt = self._attempt()
        attempt.ack(A0, SnapshotHandle(A0, 1, "k0", 0), 7)
        attempt.ack(A1, SnapshotHandle(A1, 1, "k1", 0), None)

        assert attempt.resolved
        assert attempt.all_acked()
        assert not attempt.any_failed([A0, A1])
        assert attempt.statuses[A0].offset == 7


class TestRegistry:
    def test_seeded_initial_checkpoint_is_restorable(self):
        registry = CheckpointRegistry(2)
        registry.seed_initial({0: [A0], 1: [A1]}, source_tasks={A0})

        assert registry.restore_target.checkpoint_ids() == {0: 0, 1: 0}
        assert registry.latest[0].offsets == {A0: 0}
        assert registry.latest[1].offsets == {}

    def test_stale_update_is_ignored(self):
        registry = CheckpointRegistry(1)
        registry.update(0, _entry(5))
        registry.update(0, _entry(3))
        assert registry.latest_id(0) == 5


class TestMerge:
    def test_failed_region_keeps_its_last_success(self):
        registry = CheckpointRegistry(2)
        registry.update(0, _entry(1))
        registry.update(1, _entry(1, (A1,)))

        record = merge_region_checkpoints({0: _entry(2), 1: None}, registry, current_id=2)

        assert record.checkpoint_ids() == {0: 2, 1: 1}
        assert registry.restore_target is record

    def test_region_without_any_success_is_unrestorable(self):
        registry = CheckpointRegistry(2)
        with pytest.raises(MergeError) as excinfo:
            merge_region_checkpoints({0: _entry(1), 1: None}, registry)
        assert excinfo.value.kind == MergeError.UNRESTORABLE
        assert excinfo.value.region == 1

    def test_stale_region_is_refused_with_a_lag_bound(self):
        registry = CheckpointRegistry(2)
        registry.update(1, _entry(1, (A1,)))
        with pytest.raises(MergeError) as excinfo:
            merge_region_checkpoints({0: _entry(4), 1: None}, registry,
                                     current_id=4, max_region_lag=2)
        assert excinfo.value.kind == MergeError.STALE

    @pytest.mark.parametrize("lag", [None, 2])
    def test_refused_merge_leaves_the_registry_untouched(self, lag):
        registry = CheckpointRegistry(3)
        registry.update(0, _entry(1))
        registry.update(1, _entry(1, (A1,)))
        target = registry.restore_target
        latest = dict(registry.latest)

        with pytest.raises(MergeError):
            merge_region_checkpoints({0: _entry(4), 1: None, 2: None}, registry,
                                     current_id=4, max_region_lag=lag)

        assert registry.latest == latest
        assert registry.latest_id(0) == 1
        assert registry.restore_target is target


class TestSuccessModels:
    def test_formula(self):
        assert predict_global_success(0.0, 100) == 1.0
        assert predict_global_success(1e-4, 10_000) == pytest.approx(np.exp(-1), rel=1e-3)
        with pytest.raises(ValueError):
            predict_global_success(1.5, 10)
        with pytest.raises(ValueError):
            predict_global_success(0.1, 0)

    def test_monte_carlo_agrees_with_formula(self):
        rng = np.random.default_rng(3)
        empirical = simulate_global_success(0.01, 50, 20_000, rng)
        assert empirical == pytest.approx(predict_global_success(0.01, 50), abs=0.02)

    def test_regions_succeed_more_often_than_the_whole(self):
        rng = np.random.default_rng(5)
        whole, per_region = simulate_region_success(0.05, 2, 8, 20_000, rng)

        assert per_region == pytest.approx(0.95 ** 2, abs=0.01)
        assert whole == pytest.approx(0.95 ** 16, abs=0.02)
        assert per_region > whole

    def test_region_lag(self):
        assert expected_region_lag(1.0) == 0.0
        assert expected_region_lag(0.5) == 1.0
        rng = np.random.default_rng(11)
        assert simulate_region_lag(0.5, 4, 20_000, rng) == pytest.approx(1.0, abs=0.05)
        with pytest.raises(ValueError):
            expected_region_lag(0.0)


# ============================================================================
# Keyed State and Restore
# ============================================================================

class TestKeyedStateStore:
    def test_snapshot_reports_changed_entries(self):
        store = KeyedStateStore(chunks=4)
        store.put((0, 1), 1)
        store.incr((0, 2))
        store.incr((0, 2))

        blob, changed = store.snapshot()
        assert blob == {(0, 1): 1, (0, 2): 2}
        assert changed == 2
        assert store.snapshot()[1] == 0

    def test_snapshot_is_a_copy(self):
        store = KeyedStateStore()
        store.put((2, 9), [1, 2])
        blob, _ = store.snapshot()
        store.get((2, 9)).append(3)
        assert blob[(2, 9)] == [1, 2]

    def test_lazy_restore_gates_non_resident_keys(self):
        blob = {(0, k): k for k in range(40)}
        backend = LazyStateBackend.for_state(blob, chunks=8, total_bytes=800)
        store = KeyedStateStore(chunks=8)
        store.restore(blob, backend)

        key = (0, 3)
        chunk = chunk_of(key, 8)
        with pytest.raises(StateAccessError) as excinfo:
            store.get(key)
        assert excinfo.value.chunk == chunk

        backend.mark_resident(chunk)
        assert store.get(key) == 3

        for c in range(8):
            backend.mark_resident(c)
        store.settle()
        assert store.lazy is None

    def test_prefetch_walks_manifest_order(self):
        backend = LazyStateBackend([1, 0, 2, 3], [10, 0, 20, 30])
        backend.in_flight.add(2)

        assert backend.next_prefetch() == 0
        assert backend.next_prefetch() == 3
        assert backend.next_prefetch() is None

    @given(st.dictionaries(st.tuples(st.just(0), st.integers(0, 10_000)), st.integers(),
                           max_size=200),
           st.integers(1, 32))
    @hsettings(max_examples=50, deadline=None)
    def test_chunk_manifest_accounts_for_every_entry(self, state, chunks):
        backend = LazyStateBackend.for_state(state, chunks, total_bytes=1000)
        assert sum(backend.chunk_entries) == len(state)
        assert sum(backend.chunk_bytes) <= 1000
        missing = backend.missing_chunks(state)
        assert len(set(missing)) == len(missing)
        assert set(missing) == {c for c, e in enumerate(backend.chunk_entries) if e}


class TestRestore:
    def _store(self) -> SnapshotStore:
        store = SnapshotStore(Engine(), np.random.default_rng(0), base_ns=1_000, ns_per_byte=1.0)
        store.blobs["k"] = {(0, k): 1 for k in range(16)}
        return store

    def test_initial_checkpoint_restores_empty(self):
        plan = restore_state(None, self._store())
        assert plan.blob == {}
        assert plan.resume_after_ns == 0

    def test_eager_waits_for_every_non_empty_chunk(self):
        store = self._store()
        handle = SnapshotHandle(A0, 1, "k", size=1600)
        plan = restore_state(handle, store, RestoreMode.EAGER, chunks=4)

        backend = LazyStateBackend.for_state(store.blobs["k"], 4, 1600)
        expected = sum(store.latency(b) for b, e in
                       zip(backend.chunk_bytes, backend.chunk_entries) if e)
        assert plan.backend is None
        assert plan.resume_after_ns == expected
        assert plan.total_bytes == 1600

    def test_lazy_resumes_after_manifest(self):
        store = self._store()
        plan = restore_state(SnapshotHandle(A0, 1, "k", size=1600), store,
                             RestoreMode.LAZY, chunks=4)
        assert plan.resume_after_ns == store.latency(0)
        assert plan.backend is not None and not plan.backend.all_resident

    def test_store_down_raises(self):
        store = self._store()
        store.available = False
        with pytest.raises(StoreUnavailable):
            restore_state(SnapshotHandle(A0, 1, "k", size=10), store)

    def test_backoff_doubles_until_cap(self):
        assert [backoff_ns(i, 100, 1000) for i in range(6)] == [100, 200, 400, 800, 1000, 1000]


class TestSnapshotStore:
    def test_put_completes_after_latency(self):
        engine = Engine()
        store = SnapshotStore(engine, np.random.default_rng(0), base_ns=10, ns_per_byte=2.0)
        done = []
        latency = store.put("k", {"x": 1}, size=5, on_done=done.append)

        assert latency == 20
        engine.run_until(19)
        assert done == [] and "k" not in store.blobs
        engine.run_until(20)
        assert done == [True]
        assert store.get("k") == {"x": 1}

    def test_slow_uploads(self):
        store = SnapshotStore(Engine(), np.random.default_rng(0), base_ns=10)
        assert store.set_slow(1.0, 500) == (0.0, 0)
        assert store.put("k", {}, size=0) == 510
        assert store.slow_puts == 1

    def test_unavailable_store_rejects_puts(self):
        store = SnapshotStore(Engine(), np.random.default_rng(0))
        store.available = False
        with pytest.raises(StoreUnavailable):
            store.put("k", {}, 0)
        assert store.get_latency(10) is None


# ============================================================================
# Coordinator
# ============================================================================

class TestCoordinator:
    def test_global_attempts_succeed_without_faults(self, settings):
        sim = JobSimulation(make_config(workload={"kind": "ds"}), settings)
        report = sim.run()
        coordinator = sim.coordinator

        assert report.checkpoints.attempts >= 4
        assert report.checkpoints.succeeded == report.checkpoints.attempts
        ids = [a.id for a in coordinator.finished]
        assert ids == sorted(ids) and ids[0] == 1
        last = coordinator.finished[-1].id
        assert set(sim.registry.restore_target.checkpoint_ids().values()) == {last}

    def test_incremental_chains_are_bounded(self, settings):
        config = make_config(workload={"kind": "ds_scalable", "duration_s": 8.0},
                             checkpoint={"full_every": 3})
        sim = JobSimulation(config, settings)
        sim.run()

        handles = [h for entry in sim.registry.latest.values()
                   for h in entry.handles.values() if h is not None]
        assert handles
        for handle in handles:
            chain = handle.chain()
            assert len(chain) <= 3
            assert chain[-1].is_full

    def test_region_mode_ids_never_decrease(self, settings):
        config = make_config(
            workload={"kind": "ds", "duration_s": 10.0},
            checkpoint={"mode": "region", "store": {"p_slow": 0.3, "slow_delay_s": 5.0}},
        )
        sim = JobSimulation(config, settings)
        report = sim.run()

        assert len(sim.regions) == 2
        assert report.checkpoints.region_success_rate >= report.checkpoints.success_rate
        counts = report.checkpoints
        assert counts.succeeded + counts.partial + counts.failed == counts.attempts
        seen: dict[str, int] = {}
        for line in sim.checkpoint_lines():
            for region, status in line["per_region"].items():
                assert status["id"] >= seen.get(region, 0)
                seen[region] = status["id"]

    def test_store_down_fails_every_attempt(self, settings):
        sim = JobSimulation(make_config(workload={"kind": "ds"}), settings)
        sim.store.available = False
        sim.run()

        assert sim.coordinator.finished
        assert all(a.outcome == Outcome.FAILED for a in sim.coordinator.finished)
        assert all(line["causes"] == {"store_unavailable": 4}
                   for line in sim.checkpoint_lines())
        assert set(sim.registry.restore_target.checkpoint_ids().values()) == {0}

    def test_triggers_are_skipped_while_the_jobmanager_is_down(self, settings):
        sim = JobSimulation(make_config(workload={"kind": "ds"}), settings)
        sim.coordinator.jm_alive = False
        report = sim.run()

        assert report.checkpoints.attempts == 0
        assert report.checkpoints.skipped >= 4
