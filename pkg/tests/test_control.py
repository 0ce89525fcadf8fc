"""
Tests for the control plane: leader resolution and HA, idempotent
submission, the startup pipeline, slow-TM mitigation and HotUpdate.
"""
from __future__ import annotations

import numpy as np
import pytest

from packages.core.bench.simulation import JobSimulation
from packages.core.bench.workloads import build_graph
from packages.core.config import ConfigError, WorkloadConfig
from packages.core.control import (
    Accepted,
    AllocationState,
    ClusterModel,
    CoordinationRole,
    CoordinationStore,
    LeaderInfo,
    LeaderRecord,
    LeaderService,
    OrchestrationEndpoint,
    Rejected,
    RetryPolicy,
    StartupError,
    SubmissionRequest,
    TerminateJobs,
    allocate,
    hot_update,
    mitigate_slow_tms,
    resolve_leader,
    run_startup,
    submit_with_retry,
)
from packages.core.runtime.engine import NS_PER_MS, NS_PER_S

from .conftest import make_config


def _stores(primary=None, fallback=None, primary_up=True, fallback_up=True):
    return (CoordinationStore(CoordinationRole.PRIMARY, primary_up, primary),
            CoordinationStore(CoordinationRole.FALLBACK, fallback_up, fallback))


# ============================================================================
# Leader Metadata
# ============================================================================

class TestResolveLeader:
    def test_primary_wins(self):
        primary, fallback = _stores(LeaderRecord("jm-2", 2), LeaderRecord("jm-1", 1))
        outcome = resolve_leader(primary, fallback, cached=LeaderRecord("jm-1", 1))

        assert isinstance(outcome, LeaderInfo)
        assert outcome.source == CoordinationRole.PRIMARY
        assert (outcome.leader_id, outcome.term) == ("jm-2", 2)

    def test_consistent_fallback(self):
        primary, fallback = _stores(fallback=LeaderRecord("jm-1", 1), primary_up=False)
        outcome = resolve_leader(primary, fallback, cached=LeaderRecord("jm-1", 1))

        assert isinstance(outcome, LeaderInfo)
        assert outcome.source == CoordinationRole.FALLBACK

    def test_empty_primary_reads_fallback(self):
        primary, fallback = _stores(fallback=LeaderRecord("jm-1", 1))
        outcome = resolve_leader(primary, fallback, cached=None)
        assert outcome.source == CoordinationRole.FALLBACK

    @pytest.mark.parametrize("fallback_record", [
        LeaderRecord("jm-1", 1),
        LeaderRecord("jm-9", 2),
        None,
    ])
    def test_inconsistent_fallback_terminates(self, fallback_record):
        primary, fallback = _stores(fallback=fallback_record, primary_up=False)
        outcome = resolve_leader(primary, fallback, cached=LeaderRecord("jm-2", 2))
        assert outcome == TerminateJobs("inconsistent")

    def test_both_down_terminates(self):
        primary, fallback = _stores(primary_up=False, fallback_up=False)
        outcome = resolve_leader(primary, fallback, cached=LeaderRecord("jm-1", 1))
        assert outcome == TerminateJobs("both_unavailable")

    def test_store_rejects_term_regression(self):
        store = CoordinationStore(CoordinationRole.PRIMARY, record=LeaderRecord("jm-3", 3))
        with pytest.raises(ValueError, match="term regression"):
            store.write(LeaderRecord("jm-2", 2))


class TestLeaderService:
    def test_elect_writes_both_stores(self):
        service = LeaderService()
        service.elect("jm-1")
        service.elect("jm-2")

        assert service.term == 2
        assert service.failovers == 1
        assert service.primary.record == service.fallback.record == LeaderRecord("jm-2", 2)

    def test_failover_with_primary_down_stays_consistent(self):
        service = LeaderService()
        service.elect("jm-1")
        service.check()
        service.primary.available = False
        service.elect("jm-2")

        outcome = service.check()
        assert isinstance(outcome, LeaderInfo)
        assert outcome.term == 2
        assert service.cached == LeaderRecord("jm-2", 2)
        assert service.terminations == 0

    def test_check_counts_terminations(self):
        service = LeaderService()
        service.elect("jm-1")
        service.primary.available = False
        service.fallback.available = False

        assert isinstance(service.check(), TerminateJobs)
        assert service.terminations == 1


class TestCoordinationOutages:
    def test_primary_outage_then_failover_keeps_running(self, settings):
        config = make_config(
            workload={"kind": "ds", "drain_s": 6.0},
            ha={"jm_failover_s": 1.0, "leader_check_s": 0.5},
            fault_plan=[{"at": "1s", "kind": "StoreDown", "store": "primary"},
                        {"at": "2s", "kind": "KillJM"}],
        )
        sim = JobSimulation(config, settings)
        report = sim.run()

        assert not report.job_terminated
        assert report.leader_terminations == 0
        assert sim.leader.term == 2
        assert report.output_ledger == report.input_ledger

    def test_both_stores_down_terminates_the_job(self, settings):
        config = make_config(
            workload={"kind": "ds"},
            ha={"leader_check_s": 0.5},
            fault_plan=[{"at": "1s", "kind": "StoreDown", "store": "primary"},
                        {"at": "1s", "kind": "StoreDown", "store": "fallback"}],
        )
        report = JobSimulation(config, settings).run()

        assert report.job_terminated
        assert report.leader_terminations == 1
        assert report.terminal_consumed < report.input_records
        assert report.conservation_gap == 0


# ============================================================================
# Submission
# ============================================================================

class TestSubmission:
    def test_backoff_schedule(self):
        policy = RetryPolicy(base_ns=NS_PER_S, factor=2.0)
        assert [policy.delay_ns(i) for i in range(4)] == [NS_PER_S * k for k in (1, 2, 4, 8)]

    def test_retries_through_downtime(self):
        endpoint = OrchestrationEndpoint(down_windows=[(0, int(2.5 * NS_PER_S))])
        outcome = submit_with_retry(SubmissionRequest("job-1", "key-1"), endpoint, RetryPolicy())

        assert isinstance(outcome, Accepted)
        assert outcome.attempts == 3
        assert outcome.delays_ns == [NS_PER_S, 2 * NS_PER_S]
        assert not outcome.existing

    def test_lost_ack_does_not_duplicate_the_job(self):
        endpoint = OrchestrationEndpoint(lost_acks={0})
        outcome = submit_with_retry(SubmissionRequest("job-1", "key-1"), endpoint, RetryPolicy())

        assert isinstance(outcome, Accepted)
        assert outcome.existing
        assert outcome.job_id == "job-1"
        assert endpoint.executions["key-1"] == 1

    def test_same_key_resubmission_returns_the_first_job(self):
        endpoint = OrchestrationEndpoint()
        submit_with_retry(SubmissionRequest("job-1", "key-1"), endpoint, RetryPolicy())
        again = submit_with_retry(SubmissionRequest("job-2", "key-1"), endpoint, RetryPolicy())

        assert again.job_id == "job-1"
        assert again.existing
        assert len(endpoint.accepted) == 1

    def test_budget_exhausted(self):
        endpoint = OrchestrationEndpoint(down_windows=[(0, 10**15)])
        outcome = submit_with_retry(SubmissionRequest("job-1", "key-1"), endpoint,
                                    RetryPolicy(max_attempts=5))

        assert isinstance(outcome, Rejected)
        assert outcome.reason == "Unavailable"
        assert outcome.attempts == 5
        assert len(outcome.delays_ns) == 4
        assert endpoint.accepted == {}


# ============================================================================
# Startup
# ============================================================================

def _fixed_model(**kwargs) -> ClusterModel:
    return ClusterModel(startup_dist="fixed", startup_p50_ms=800.0, **kwargs)


class TestClusterModel:
    def test_deploy_cost(self):
        model = ClusterModel.large_cluster()
        unbatched, rpcs = model.deploy_ns(1024, 512, batched=False)
        batched, batched_rpcs = model.deploy_ns(1024, 512, batched=True)

        assert unbatched == 1024 * (9 * NS_PER_MS + 220_000)
        assert batched == 512 * 9 * NS_PER_MS + 1024 * 220_000
        assert (rpcs, batched_rpcs) == (1024, 512)

    def test_provisioning_contention(self):
        model = ClusterModel.large_cluster()
        assert model.provision_delay_ns(0) == 0
        assert model.provision_delay_ns(1) == 7600 * NS_PER_MS
        assert model.provision_delay_ns(16) > model.provision_delay_ns(4)

    def test_startup_sampler_quantiles(self):
        model = ClusterModel(startup_p50_ms=800.0, startup_p99_ms=5000.0)
        sampler = model.startup_sampler(np.random.default_rng(0))
        draws = np.array([sampler() for _ in range(20_000)]) / NS_PER_MS

        assert np.median(draws) == pytest.approx(800.0, rel=0.05)
        assert np.quantile(draws, 0.99) == pytest.approx(5000.0, rel=0.15)

    def test_fixed_sampler(self):
        sampler = _fixed_model().startup_sampler(np.random.default_rng(0))
        assert {sampler() for _ in range(5)} == {800 * NS_PER_MS}


class TestMitigation:
    def test_not_triggered_within_threshold(self):
        actions = mitigate_slow_tms(AllocationState(20, 100 * NS_PER_S, 3, 8))
        assert (actions.extra, actions.reason) == (0, "not_triggered")

    def test_extra_is_capped(self):
        actions = mitigate_slow_tms(AllocationState(20, 200 * NS_PER_S, 3, 8))
        assert (actions.extra, actions.reason) == (5, "provisioned")
        assert mitigate_slow_tms(AllocationState(4, 200 * NS_PER_S, 1, 8)).extra == 2

    def test_bounded_by_spares(self):
        assert mitigate_slow_tms(AllocationState(20, 200 * NS_PER_S, 3, 2)).extra == 2
        actions = mitigate_slow_tms(AllocationState(20, 200 * NS_PER_S, 3, 0))
        assert (actions.extra, actions.reason) == (0, "spares_exhausted")

    def test_redundant_tm_replaces_the_straggler(self):
        model = _fixed_model(spares=8)
        straggler = {0: 300 * NS_PER_S}
        slow = allocate(4, model, np.random.default_rng(0), latency_overrides=straggler)
        fast = allocate(4, model, np.random.default_rng(0), latency_overrides=straggler,
                        mitigation=True)

        assert slow.allocate_ns == 300 * NS_PER_S
        assert fast.extra == 2
        assert fast.allocate_ns == 120 * NS_PER_S + 800 * NS_PER_MS
        assert fast.redundant_used == 1
        assert fast.released == 2


class TestStartup:
    def _job(self, p: int = 8):
        return build_graph(WorkloadConfig(kind="q2", parallelism=p))

    def test_cold_start_phases(self):
        model = _fixed_model(slots_per_tm=2)
        report = run_startup(self._job(), model, np.random.default_rng(0), batched=True)

        assert report.path == "cold"
        assert report.tasks == 16
        assert report.tms == 8
        assert report.rpc_count == 8
        assert report.allocate_ns == 800 * NS_PER_MS
        assert report.total_ns == report.parse_ns + report.allocate_ns + report.deploy_ns
        assert report.to_dict()["total_ns"] == report.total_ns

    def test_not_enough_tms(self):
        model = _fixed_model(slots_per_tm=1, capacity_tms=4)
        with pytest.raises(StartupError) as excinfo:
            run_startup(self._job(), model, np.random.default_rng(0))
        assert (excinfo.value.needed, excinfo.value.available) == (16, 4)

    def test_hot_update_skips_allocation_when_held_tms_suffice(self):
        model = _fixed_model(slots_per_tm=2)
        job = self._job()
        cold = run_startup(job, model, np.random.default_rng(0))
        hot = hot_update(cold.tms, job, model, np.random.default_rng(0))

        assert hot.path == "hot"
        assert hot.allocate_ns == 0
        assert hot.total_ns < cold.total_ns

    def test_hot_update_allocates_only_the_missing_tms(self):
        model = _fixed_model(slots_per_tm=2)
        bigger = self._job(p=12)
        hot = hot_update(8, bigger, model, np.random.default_rng(0))
        assert hot.tms == 12
        assert hot.allocate_ns == 800 * NS_PER_MS

    def test_simulation_reports_too_small_cluster_as_config_error(self, settings):
        with pytest.raises(ConfigError) as excinfo:
            JobSimulation(make_config(cluster={"tms": 1}), settings)
        assert excinfo.value.location == "cluster.tms"
