"""
End-to-end resiliency scenarios.

Long virtual horizons; deselect with ``-m "not acceptance"``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from packages.core.bench.runner import run, summary_dict
from packages.core.bench.simulation import AutoscaleSimulation, JobSimulation
from packages.core.bench.workloads import build_graph
from packages.core.chaos import load_plan, random_plan
from packages.core.checkpoint.merge import (
    predict_global_success,
    simulate_global_success,
    simulate_region_success,
)
from packages.core.config import WorkloadConfig, load_run_config
from packages.core.control import (
    ClusterModel,
    LeaderRecord,
    LeaderService,
    OrchestrationEndpoint,
    RetryPolicy,
    SubmissionRequest,
    TerminateJobs,
    hot_update,
    run_startup,
    submit_with_retry,
)
from packages.core.runtime.engine import NS_PER_MS, NS_PER_S
from packages.core.seeding import RngStreams

from ..conftest import make_config

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def _load(name: str, *overrides: str):
    return load_run_config(CONFIGS / name, list(overrides))


def _summary_bytes(report) -> str:
    return json.dumps(summary_dict(report), sort_keys=True)


# ============================================================================
# Checkpointing
# ============================================================================

class TestRegionCheckpointing:
    OVERRIDES = ("workload.duration_s=12600", "workload.rate=8")

    def test_region_mode_beats_global_mode(self, settings):
        reports = {mode: run(_load(f"ds_{mode}.json", *self.OVERRIDES), settings=settings).report
                   for mode in ("global", "region")}
        oracle, region_oracle = simulate_region_success(
            0.05, 2, 8, 100_000, RngStreams(0).get("oracle"))

        global_ck = reports["global"].checkpoints
        region_ck = reports["region"].checkpoints
        assert global_ck.attempts >= 400
        assert global_ck.success_rate == pytest.approx(oracle, abs=0.03)
        assert region_ck.region_success_rate == pytest.approx(region_oracle, abs=0.04)
        assert region_ck.region_success_rate - global_ck.success_rate >= 0.25

    def test_same_seed_same_summary(self, settings):
        overrides = ("workload.duration_s=600",)
        first = run(_load("ds_region.json", *overrides), settings=settings).report
        second = run(_load("ds_region.json", *overrides), settings=settings).report
        assert _summary_bytes(first) == _summary_bytes(second)

    def test_global_success_formula(self):
        predicted = predict_global_success(1e-4, 10_000)
        empirical = simulate_global_success(1e-4, 10_000, 10_000, RngStreams(0).get("oracle"))

        assert predicted == pytest.approx(math.exp(-1), abs=1e-4)
        assert empirical == pytest.approx(predicted, abs=0.02)


# ============================================================================
# Shuffle under a straggler
# ============================================================================

class TestStragglerShuffle:
    def _run(self, settings, shuffle: str):
        return run(_load("q2_straggler.json", f"workload.shuffle={shuffle}"),
                   settings=settings).report

    def test_backlog_aware_bypasses_the_straggler(self, settings):
        round_robin = self._run(settings, "rebalance")
        adaptive = self._run(settings, "backlog_aware")

        # eight consumers advance in lockstep with the 100 ms straggler
        assert round_robin.qps_steady == pytest.approx(8 * 10.0, rel=0.10)
        assert adaptive.qps_steady >= 5 * round_robin.qps_steady
        assert adaptive.records_dropped == round_robin.records_dropped == 0

    def test_same_seed_same_summary(self, settings):
        config = _load("q2_straggler.json", "workload.duration_s=10")
        first = run(config, settings=settings).report
        second = run(config, settings=settings).report
        assert _summary_bytes(first) == _summary_bytes(second)


# ============================================================================
# Single-task recovery
# ============================================================================

class TestSingleTaskRecovery:
    OVERRIDES = ("workload.duration_s=1200",)

    def test_single_task_keeps_throughput(self, settings):
        report = run(_load("single_task.json", *self.OVERRIDES), settings=settings).report

        (event,) = report.recoveries
        assert event.strategy == "single_task"
        assert event.time_s == pytest.approx(900.0)
        assert report.qps_min >= 0.85 * report.qps_steady
        assert report.duplicates == 0
        # 400 records/s over four sinks
        inbound = 400 / 4
        assert 0 < report.records_dropped <= 1.1 * inbound * event.recovery_time_s

    def test_region_failover_stalls_then_replays(self, settings):
        config = _load("single_task.json", *self.OVERRIDES, "recovery.strategy=region",
                       "slo.gamma=full", "engine.bucket_s=0.1")
        report = run(config, settings=settings).report

        (event,) = report.recoveries
        assert event.recovery_time_s > 0
        assert event.tasks == 8
        assert report.qps_min == 0.0
        assert report.records_dropped == 0
        assert report.output_ledger == report.input_ledger

    def test_same_seed_same_summary(self, settings):
        overrides = ("workload.duration_s=960", "workload.drain_s=10")
        first = run(_load("single_task.json", *overrides), settings=settings).report
        second = run(_load("single_task.json", *overrides), settings=settings).report
        assert _summary_bytes(first) == _summary_bytes(second)


# ============================================================================
# Autoscaling
# ============================================================================

def _autoscale_config():
    return make_config(
        workload={"kind": "ds_scalable", "parallelism": 2, "source_parallelism": 8,
                  "rate_steps": [[0, 1000], [3600, 4000], [7200, 2000]],
                  "duration_s": 10800.0, "service_ms": 1.0},
        checkpoint={"enabled": False},
        autoscale={"enabled": True, "interval_s": 60.0, "cooldown_s": 300.0,
                   "max_step": 4.0},
    )


class TestAutoscaleTracking:
    def test_tracks_each_rate_step(self):
        sim = AutoscaleSimulation(_autoscale_config())
        report = sim.run()
        rounds = sim.rounds().set_index("time_s")

        # ceil(beta * demand / true rate) with beta 1.2 and 1000 records/s per task
        for t, demand in ((3540.0, 1000), (7140.0, 4000), (10740.0, 2000)):
            expected = math.ceil(1.2 * demand / 1000)
            assert abs(rounds.loc[t, "p_sink"] - expected) <= 1, t
        assert report.autoscale.rolled_back == 0
        assert not report.autoscale.breaker_opened

    def test_no_changes_inside_cooldown(self):
        sim = AutoscaleSimulation(_autoscale_config())
        sim.run()
        rounds = sim.rounds()

        applied = rounds[rounds["outcome"].str.startswith("Applied")]["time_s"].tolist()
        assert len(applied) >= 2
        assert all(b - a >= 300.0 for a, b in zip(applied, applied[1:]))
        changes = rounds["p_sink"].diff().fillna(0) != 0
        assert set(rounds.loc[changes, "time_s"]) <= set(applied) | set(
            rounds[rounds["outcome"].str.startswith("RolledBack")]["time_s"])

    def test_degradation_after_apply_rolls_back(self):
        baseline = AutoscaleSimulation(_autoscale_config())
        baseline.run()
        before = baseline.rounds()
        applied_at = before[before["outcome"].str.startswith("Applied")
                            & (before["time_s"] >= 3600.0)]["time_s"].iloc[0]

        plan = load_plan([{"at": f"{applied_at + 10}s", "kind": "CpuSlow", "target": "tm-0",
                           "factor": 5, "duration": "600s"}])
        sim = AutoscaleSimulation(_autoscale_config(), plan=plan)
        report = sim.run()
        rounds = sim.rounds()

        assert report.autoscale.rolled_back >= 1
        rolled = rounds[rounds["outcome"].str.startswith("RolledBack")].iloc[0]
        # probation is two control intervals
        assert rolled["time_s"] == pytest.approx(applied_at + 120.0)
        columns = [c for c in rounds.columns if c.startswith("p_")]
        prior = rounds[rounds["time_s"] < applied_at].iloc[-1]
        assert rolled[columns].to_dict() == prior[columns].to_dict()


# ============================================================================
# Startup
# ============================================================================

class TestStartupAcceleration:
    @pytest.fixture
    def q2_512(self):
        return build_graph(WorkloadConfig(kind="q2", parallelism=512))

    def test_calibrated_phases(self, q2_512):
        report = run_startup(q2_512, ClusterModel.large_cluster(),
                             RngStreams(0).derive("cluster", 0),
                             batched=False)

        assert report.tms == 512
        assert report.parse_ns / NS_PER_MS == pytest.approx(315, rel=0.2)
        assert report.allocate_ns / NS_PER_MS == pytest.approx(234_977, rel=0.2)
        assert report.deploy_ns / NS_PER_MS == pytest.approx(9_446, rel=0.2)

    def test_batched_deploy(self, q2_512):
        model = ClusterModel.large_cluster()
        unbatched = run_startup(q2_512, model, np.random.default_rng(0), batched=False)
        batched = run_startup(q2_512, model, np.random.default_rng(0), batched=True)

        assert unbatched.rpc_count == unbatched.tasks == 1024
        assert batched.rpc_count == batched.tms == 512
        saved = unbatched.deploy_ns - batched.deploy_ns
        assert saved == pytest.approx((1024 - 512) * model.a_ns, rel=0.10)

    def test_slow_tm_mitigation(self):
        model = ClusterModel(spares=5)
        job = build_graph(WorkloadConfig(kind="q2", parallelism=8))
        straggler = {0: 300 * NS_PER_S}
        slow = run_startup(job, model, RngStreams(0).derive("cluster", 1),
                           latency_overrides=straggler)
        fast = run_startup(job, model, RngStreams(0).derive("cluster", 1),
                           latency_overrides=straggler, mitigation=True)

        assert slow.allocate_ns == 300 * NS_PER_S
        assert fast.path == "mitigated"
        assert fast.allocate_ns <= 130 * NS_PER_S
        # ceil(0.3 * 4) redundant TMs; the straggler and one unused spare are released
        assert fast.tms == 4
        assert fast.redundant_tms_used == 1
        assert fast.released_tms == math.ceil(0.3 * fast.tms) == 2

    def test_hot_update_skips_allocation(self, q2_512):
        hot = hot_update(512, q2_512, ClusterModel.large_cluster(), np.random.default_rng(0))
        assert hot.allocate_ns == 0

    @pytest.mark.parametrize("parallelism", [8, 64, 256, 512])
    def test_batched_hot_restart_within_twenty_seconds(self, parallelism):
        job = build_graph(WorkloadConfig(kind="q2", parallelism=parallelism))
        model = ClusterModel.large_cluster()
        cold = run_startup(job, model, np.random.default_rng(0), batched=True)
        hot = hot_update(cold.tms, job, model, np.random.default_rng(0), batched=True)

        assert hot.allocate_ns == 0
        assert hot.rpc_count == hot.tms
        assert hot.total_ns <= 20 * NS_PER_S
        assert hot.total_ns < cold.total_ns
        assert hot.path == "hot"


# ============================================================================
# Coordination HA and submission
# ============================================================================

class TestCoordinationHa:
    def test_primary_store_loss_is_survivable(self, settings):
        report = run(_load("ha_primary_down.json"), settings=settings).report
        assert report.leader_terminations == 0
        assert not report.job_terminated

    def test_rule_table(self):
        service = LeaderService()
        service.elect("jm-1")
        service.check()
        service.primary.available = False
        assert not isinstance(service.check(), TerminateJobs)
        service.fallback.available = False
        assert service.check() == TerminateJobs("both_unavailable")

        regressed = LeaderService()
        regressed.elect("jm-1")
        regressed.elect("jm-2")
        regressed.check()
        regressed.primary.available = False
        regressed.fallback.record = LeaderRecord("jm-1", 1)
        assert regressed.check() == TerminateJobs("inconsistent")

    def test_submission_never_executes_twice(self):
        rng = np.random.default_rng(42)
        policy = RetryPolicy(base_ns=NS_PER_S, factor=2.0, max_attempts=6)
        for schedule in range(1000):
            down_end = int(rng.integers(0, 40)) * NS_PER_S // 2
            lost = {int(i) for i in np.flatnonzero(rng.random(6) < 0.3)}
            endpoint = OrchestrationEndpoint(down_windows=[(0, down_end)], lost_acks=lost)
            key = f"key-{schedule}"
            outcome = submit_with_retry(SubmissionRequest(f"job-{schedule}", key), endpoint,
                                        policy)

            assert endpoint.executions[key] <= 1
            assert outcome.delays_ns == [policy.base_ns * 2 ** i
                                         for i in range(len(outcome.delays_ns))]


# ============================================================================
# Exactly-once under random fault plans
# ============================================================================

class TestExactlyOnce:
    @pytest.mark.parametrize("mode", ["global", "region"])
    @pytest.mark.parametrize("strategy", ["full", "region"])
    def test_random_plans_preserve_the_ledger(self, settings, mode, strategy):
        config = make_config(
            workload={"kind": "ds", "stages": 3, "duration_s": 20.0, "drain_s": 120.0},
            checkpoint={"mode": mode},
            recovery={"strategy": strategy},
        )
        baseline = JobSimulation(config, settings).run()
        assert baseline.output_ledger == baseline.input_ledger

        for seed in range(20):
            sim = JobSimulation(config, settings)
            sim.plan = random_plan(seed, 20 * NS_PER_S, list(sim.cluster.tms))
            report = sim.run()

            assert report.valid, seed
            assert not report.recovery_pending, seed
            assert report.output_ledger == baseline.output_ledger, seed
