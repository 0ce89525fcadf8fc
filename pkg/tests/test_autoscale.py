"""
Tests for autoscaling: signal smoothing, demand propagation, the safety
policies and controller runs on the fluid job model.
"""
from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from packages.core.autoscale import (
    ApplyKind,
    FluidJob,
    MetricWindow,
    OperatorSample,
    PolicyState,
    SafetyPolicy,
    ScalingDecision,
    guard_and_apply,
    parse_clock,
    smooth,
    target_parallelism,
)
from packages.core.bench.simulation import AutoscaleSimulation
from packages.core.bench.workloads import build_graph
from packages.core.config import AutoscaleConfig, WorkloadConfig
from packages.core.runtime.engine import NS_PER_S

from .conftest import make_config

MIN = 60 * NS_PER_S


def _window(**samples: OperatorSample) -> MetricWindow:
    window = MetricWindow(3)
    for op, sample in samples.items():
        window.push(op, sample)
    return window


def _scalable_graph(p: int = 2):
    return build_graph(WorkloadConfig(kind="ds_scalable", parallelism=p, source_parallelism=4))


# ============================================================================
# Signals
# ============================================================================

class TestSmooth:
    def test_true_rate_is_per_instance_busy_rate(self):
        window = _window(sink=OperatorSample(100.0, 100.0, 0.5))
        signals = smooth(window, {"sink": 2}, sources=set())
        assert signals.true_rate["sink"] == pytest.approx(100.0)

    def test_saturated_operator_counts_as_fully_busy(self):
        window = _window(sink=OperatorSample(500.0, 200.0, 0.97))
        signals = smooth(window, {"sink": 2}, sources=set(), s_sat=0.95)
        assert signals.true_rate["sink"] == pytest.approx(100.0)

    def test_zero_busy_with_output_holds_previous_rate(self):
        first = smooth(_window(sink=OperatorSample(10.0, 10.0, 0.1)), {"sink": 1}, set())
        second = smooth(_window(sink=OperatorSample(10.0, 10.0, 0.0)), {"sink": 1}, set(),
                        previous=first)

        assert "sink" in second.rejected
        assert second.true_rate["sink"] == first.true_rate["sink"]

    def test_idle_operator_has_no_rate(self):
        signals = smooth(_window(sink=OperatorSample(0.0, 0.0, 0.0)), {"sink": 1}, set())
        assert signals.true_rate["sink"] is None
        assert not signals.rejected

    def test_source_busy_is_corrected(self):
        window = _window(source=OperatorSample(100.0, 100.0, 0.4))
        signals = smooth(window, {"source": 1}, sources={"source"}, c=2.0)
        assert signals.busy["source"] == pytest.approx(0.8)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            MetricWindow(0)
        with pytest.raises(ValueError, match="empty"):
            smooth(MetricWindow(2), {}, set())

    def test_busy_is_clamped_and_window_is_bounded(self):
        window = MetricWindow(2)
        for busy in (1.5, -1.0, 0.3):
            window.push("op", OperatorSample(1.0, 1.0, busy))
        assert [s.busy for s in window.samples["op"]] == [0.0, 0.3]
        assert len(window) == 2


class TestTargetParallelism:
    def test_demand_over_true_rate(self):
        graph = _scalable_graph()
        signals = smooth(_window(source=OperatorSample(1000.0, 1000.0, 0.1),
                                 sink=OperatorSample(1000.0, 1000.0, 1.0)),
                         {"source": 4, "sink": 2}, {"source"})
        signals.demand_sources["source"] = 1000.0
        decision = target_parallelism(signals, graph, {"source": 4, "sink": 2}, beta=1.2)

        # 1000 * 1.2 demand over 500 per instance
        assert decision.targets == {"source": 4, "sink": 3}
        assert decision.demand["sink"] == pytest.approx(1200.0)
        assert decision.reasons["source"] == "source"

    def test_targets_are_clamped(self):
        graph = _scalable_graph()
        signals = smooth(_window(sink=OperatorSample(10.0, 10.0, 1.0)), {"sink": 2}, set())
        signals.demand_sources["source"] = 1e6
        decision = target_parallelism(signals, graph, {"source": 4, "sink": 2}, max_p=16)
        assert decision.targets["sink"] == 16

    @given(st.lists(st.floats(min_value=0.0, max_value=1e5), min_size=2, max_size=20))
    def test_targets_never_fall_as_demand_rises(self, demands):
        graph = _scalable_graph()
        window = _window(sink=OperatorSample(1000.0, 1000.0, 1.0))
        targets = []
        for demand in sorted(demands):
            signals = smooth(window, {"source": 4, "sink": 2}, set())
            signals.demand_sources["source"] = demand
            decision = target_parallelism(signals, graph, {"source": 4, "sink": 2}, max_p=256)
            targets.append(decision.targets["sink"])
        assert targets == sorted(targets)

    def test_forward_edges_pin_parallelism(self):
        graph = build_graph(WorkloadConfig(kind="ds", parallelism=3))
        signals = smooth(_window(sink=OperatorSample(10.0, 10.0, 1.0)), {"sink": 3}, set())
        signals.demand_sources["source"] = 1e6
        decision = target_parallelism(signals, graph, {"source": 3, "sink": 3})

        assert decision.targets["sink"] == 3
        assert decision.reasons["sink"] == "not_scalable"


# ============================================================================
# Safety Policies
# ============================================================================

def _decide(state: PolicyState, policy: SafetyPolicy, sink: int, now_ns: int,
            throughput: float = 100.0):
    decision = ScalingDecision({"sink": sink})
    return guard_and_apply(decision, policy, state, now_ns, throughput)


class TestSafetyPolicy:
    def _policy(self, **kwargs) -> SafetyPolicy:
        defaults = dict(cooldown_ns=5 * MIN, probation_ns=2 * MIN, max_step=2.0)
        return SafetyPolicy(**{**defaults, **kwargs})

    def test_apply_then_probation_then_cooldown(self):
        policy = self._policy()
        state = PolicyState({"sink": 4})

        assert _decide(state, policy, 6, 0).kind == ApplyKind.APPLIED
        assert state.parallelism == {"sink": 6}

        held = _decide(state, policy, 8, 1 * MIN)
        assert (held.kind, held.reason) == (ApplyKind.DEFERRED, "probation")

        cooled = _decide(state, policy, 8, 3 * MIN)
        assert (cooled.kind, cooled.reason) == (ApplyKind.DEFERRED, "cooldown")

        assert _decide(state, policy, 8, 5 * MIN).kind == ApplyKind.APPLIED

    def test_no_change(self):
        state = PolicyState({"sink": 4})
        outcome = _decide(state, self._policy(), 4, 0)
        assert (outcome.kind, outcome.reason) == (ApplyKind.DEFERRED, "no_change")

    def test_degraded_probation_rolls_back(self):
        policy = self._policy(rho=0.8)
        state = PolicyState({"sink": 4})
        _decide(state, policy, 8, 0, throughput=100.0)

        outcome = _decide(state, policy, 8, 2 * MIN, throughput=70.0)
        assert outcome.kind == ApplyKind.ROLLED_BACK
        assert state.parallelism == {"sink": 4}
        assert state.consecutive_failures == 1

    def test_breaker_opens_after_consecutive_rollbacks(self):
        policy = self._policy(cooldown_ns=0, breaker_k=2, breaker_reset_ns=60 * MIN)
        state = PolicyState({"sink": 4})
        now = 0
        for _ in range(2):
            assert _decide(state, policy, 8, now, throughput=100.0).kind == ApplyKind.APPLIED
            now += 2 * MIN
            assert _decide(state, policy, 8, now, throughput=10.0).kind == ApplyKind.ROLLED_BACK
        assert state.breaker_open

        assert _decide(state, policy, 8, now + MIN).kind == ApplyKind.BREAKER_OPEN
        assert _decide(state, policy, 8, now + 61 * MIN).kind == ApplyKind.APPLIED
        assert not state.breaker_open

    def test_breaker_opens_on_the_third_consecutive_rollback(self):
        policy = self._policy(cooldown_ns=0)
        assert policy.breaker_k == 3
        state = PolicyState({"sink": 4})
        now = 0
        for attempt in range(3):
            assert not state.breaker_open, attempt
            assert _decide(state, policy, 8, now, throughput=100.0).kind == ApplyKind.APPLIED
            now += 2 * MIN
            assert _decide(state, policy, 8, now, throughput=10.0).kind == ApplyKind.ROLLED_BACK
            assert state.consecutive_failures == attempt + 1
        assert state.breaker_open
        assert _decide(state, policy, 8, now + MIN).kind == ApplyKind.BREAKER_OPEN

    def test_successful_probation_resets_the_failure_count(self):
        policy = self._policy(cooldown_ns=0)
        state = PolicyState({"sink": 4})
        _decide(state, policy, 8, 0, throughput=100.0)
        _decide(state, policy, 8, 2 * MIN, throughput=10.0)
        _decide(state, policy, 8, 2 * MIN, throughput=100.0)
        _decide(state, policy, 6, 4 * MIN, throughput=100.0)

        assert state.consecutive_failures == 0
        assert not state.breaker_open

    def test_freeze_blocks_only_downscales(self):
        policy = self._policy(freeze=[(parse_clock("22:00"), parse_clock("02:00"))],
                              clock_start_min=parse_clock("23:00"))
        down = _decide(PolicyState({"sink": 4}), policy, 2, 0)
        assert (down.kind, down.reason) == (ApplyKind.DEFERRED, "freeze")

        up = _decide(PolicyState({"sink": 4}), policy, 6, 0)
        assert up.kind == ApplyKind.APPLIED

        # 03:00, outside the window
        assert _decide(PolicyState({"sink": 4}), policy, 2, 240 * MIN).kind == ApplyKind.APPLIED

    def test_rate_limit(self):
        policy = self._policy(cooldown_ns=0, probation_ns=0, max_changes_per_hour=2)
        state = PolicyState({"sink": 4})
        assert _decide(state, policy, 5, 0).kind == ApplyKind.APPLIED
        assert _decide(state, policy, 6, MIN).kind == ApplyKind.APPLIED
        limited = _decide(state, policy, 7, 2 * MIN)
        assert (limited.kind, limited.reason) == (ApplyKind.DEFERRED, "rate_limit")
        assert _decide(state, policy, 7, 61 * MIN).kind == ApplyKind.APPLIED

    def test_step_bound_defers_by_default(self):
        state = PolicyState({"sink": 4})
        strict = _decide(state, self._policy(), 20, 0)
        assert (strict.kind, strict.reason) == (ApplyKind.DEFERRED, "max_step")
        assert state.parallelism == {"sink": 4}

        down = _decide(PolicyState({"sink": 9}), self._policy(), 1, 0)
        assert (down.kind, down.reason) == (ApplyKind.DEFERRED, "max_step")

        assert not SafetyPolicy().clamp_steps
        assert not SafetyPolicy.from_config(AutoscaleConfig()).clamp_steps

    def test_step_bound_clamps_when_enabled(self):
        clamped = PolicyState({"sink": 4})
        assert _decide(clamped, self._policy(clamp_steps=True), 20, 0).parallelism == {"sink": 8}

        down = PolicyState({"sink": 9})
        assert _decide(down, self._policy(clamp_steps=True), 1, 0).parallelism == {"sink": 5}

    def test_bounds(self):
        state = PolicyState({"sink": 4})
        outcome = _decide(state, self._policy(max_p=6), 8, 0)
        assert outcome.parallelism == {"sink": 6}

    def test_parse_clock(self):
        assert parse_clock("00:00") == 0
        assert parse_clock("13:45") == 825
        for bad in ("24:00", "7", "ab:cd"):
            with pytest.raises(ValueError):
                parse_clock(bad)

    def test_rho_must_be_a_fraction(self):
        with pytest.raises(ValueError):
            SafetyPolicy(rho=1.0)


# ============================================================================
# Fluid Job and Controller
# ============================================================================

class TestFluidJob:
    def test_saturated_operator_builds_backlog(self):
        graph = build_graph(WorkloadConfig(kind="ds_scalable", parallelism=1,
                                           source_parallelism=1))
        job = FluidJob(graph, {"sink": 10.0}, {"source": lambda t: 20.0})
        samples = job.step(0, NS_PER_S)

        assert samples["sink"].processed_rate == pytest.approx(10.0)
        assert samples["sink"].busy == pytest.approx(1.0)
        assert job.backlog["sink"] == pytest.approx(10.0)
        assert job.last_throughput == pytest.approx(10.0)

    def test_rescale_pauses_processing(self):
        graph = build_graph(WorkloadConfig(kind="ds_scalable", parallelism=1,
                                           source_parallelism=1))
        job = FluidJob(graph, {"sink": 10.0}, {"source": lambda t: 5.0})
        job.rescale({"source": 1, "sink": 2}, now_ns=0, downtime_ns=2 * NS_PER_S)

        assert job.step(0, NS_PER_S)["sink"].processed_rate == 0.0
        assert job.step(2 * NS_PER_S, NS_PER_S)["sink"].processed_rate == pytest.approx(10.0)


def _autoscale_config(**autoscale):
    return make_config(
        workload={"kind": "ds_scalable", "parallelism": 2, "source_parallelism": 8,
                  "rate_steps": [[0, 1000], [600, 4000]], "duration_s": 2400.0,
                  "service_ms": 1.0},
        checkpoint={"enabled": False},
        autoscale={"enabled": True, "interval_s": 60.0, "cooldown_s": 300.0,
                   "max_step": 2.0, "clamp_steps": True, **autoscale},
    )


class TestAutoscaleSimulation:
    def test_tracks_a_rate_step(self):
        sim = AutoscaleSimulation(_autoscale_config())
        report = sim.run()
        auto = report.autoscale

        assert auto.rounds == 40
        assert auto.final_parallelism == {"source": 8, "sink": 5}
        assert auto.applied == 2
        assert auto.rolled_back == 0
        assert not auto.breaker_opened

    def test_rounds_frame_records_each_decision(self):
        sim = AutoscaleSimulation(_autoscale_config())
        sim.run()
        rounds = sim.rounds()

        assert len(rounds) == 40
        assert {"time_s", "outcome", "p_sink", "target_sink"} <= set(rounds.columns)
        assert rounds["p_sink"].iloc[0] == 2
        assert rounds["p_sink"].iloc[-1] == 5

    def test_converges_within_two_rounds_of_a_step(self):
        sim = AutoscaleSimulation(_autoscale_config(max_step=4.0, clamp_steps=False))
        sim.run()
        rounds = sim.rounds()
        after = rounds[rounds["time_s"] > 600.0]
        converged_at = after[after["p_sink"] == 5]["time_s"].iloc[0]

        assert len(after[after["time_s"] <= converged_at]) <= 2
        assert (after[after["time_s"] >= converged_at]["p_sink"] == 5).all()

    def test_cpu_slow_degrades_capacity_until_expiry(self):
        config = _autoscale_config(interval_s=5000.0).model_copy(update={
            "fault_plan": [{"at": "100s", "kind": "CpuSlow", "target": "tm-0",
                            "factor": 4, "duration": "50s"}],
        })
        sim = AutoscaleSimulation(config)
        sim.run()
        series = sim.series().set_index("t_s")

        assert series.loc[90.0, "throughput"] == pytest.approx(1000.0)
        # two instances at a quarter of 1000 records/s each
        assert series.loc[120.0, "throughput"] == pytest.approx(500.0)
        # backlog drains at full capacity, then the rate settles back to the input
        assert series.loc[160.0, "throughput"] == pytest.approx(2000.0)
        assert series.loc[200.0, "throughput"] == pytest.approx(1000.0)

    def test_overlapping_cpu_slow_recovers_full_speed(self):
        config = _autoscale_config(interval_s=5000.0).model_copy(update={
            "fault_plan": [
                {"at": "100s", "kind": "CpuSlow", "target": "tm-0", "factor": 2, "duration": "50s"},
                {"at": "120s", "kind": "CpuSlow", "target": "tm-0", "factor": 5, "duration": "50s"},
            ],
        })
        sim = AutoscaleSimulation(config)
        factors = []
        for t in (110, 130, 160, 200):
            sim.engine.at(t * NS_PER_S, lambda: factors.append(sim.job.factor))
        sim.run()

        assert factors == pytest.approx([0.5, 0.1, 0.2, 1.0])
