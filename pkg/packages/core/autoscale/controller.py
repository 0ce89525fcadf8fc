"""
Autoscale Controller

Periodic control loop (engine events) that samples operator metrics, smooths
them, sizes each operator and applies the guarded decision as a HotUpdate
restart. FluidJob is the controller-level job model it drives: operators as
fluid queues with per-instance capacity and selectivity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd

from ..control.models import ClusterModel
from ..control.startup import hot_update
from ..graph.models import LogicalGraph, OperatorKind
from ..runtime.engine import NS_PER_S, Engine
from .policy import ApplyKind, ApplyOutcome, PolicyState, SafetyPolicy, guard_and_apply
from .signals import MetricWindow, OperatorSample, Signals, smooth, target_parallelism

logger = logging.getLogger(__name__)

RateFn = Callable[[float], float]


class FluidJob:
    """
    Fluid model of a running job.

    Each operator drains its backlog at parallelism * capacity * factor
    records/s; outputs scale by selectivity. A rescale pauses processing for
    the restart downtime.
    """

    def __init__(self, logical: LogicalGraph, capacity: dict[str, float],
                 rates: dict[str, RateFn]):
        self.logical = logical
        self.order = logical.topological_order()
        self.specs = logical.operator_map
        self.parallelism = logical.parallelism
        self.capacity = capacity
        self.rates = rates
        self.backlog = {op: 0.0 for op in self.order}
        self.factor = 1.0
        self.paused_until_ns = 0
        self.last_throughput = 0.0

    def degrade(self, factor: float) -> None:
        self.factor = factor

    def rescale(self, parallelism: dict[str, int], now_ns: int, downtime_ns: int) -> None:
        self.parallelism = dict(parallelism)
        self.paused_until_ns = now_ns + downtime_ns

    def step(self, now_ns: int, dt_ns: int) -> dict[str, OperatorSample]:
        dt = dt_ns / NS_PER_S
        t = now_ns / NS_PER_S
        paused = now_ns < self.paused_until_ns
        out_rate: dict[str, float] = {}
        samples: dict[str, OperatorSample] = {}
        throughput = 0.0
        for op in self.order:
            spec = self.specs[op]
            if spec.kind == OperatorKind.SOURCE:
                arrival = self.rates[op](t) if op in self.rates else 0.0
            else:
                arrival = sum(out_rate[e.source] for e in self.logical.upstream_edges(op))
            cap = self.parallelism[op] * self.capacity.get(op, math.inf) * self.factor
            available = self.backlog[op] + arrival * dt
            processed = 0.0 if paused else min(available, cap * dt)
            self.backlog[op] = available - processed
            rate = processed / dt
            busy = rate / cap if cap > 0 and cap != math.inf else 0.0
            out_rate[op] = rate * spec.selectivity
            samples[op] = OperatorSample(arrival, rate, busy, self.backlog[op])
            if self.logical.is_terminal(op):
                throughput += rate
        self.last_throughput = throughput
        return samples


@dataclass
class ControlRound:
    time_s: float
    outcome: str
    parallelism: dict[str, int]
    targets: dict[str, int]
    demand: dict[str, float]
    throughput: float


class AutoscaleController:
    """Single writer of the job's parallelism vector."""

    def __init__(
        self,
        engine: Engine,
        job: FluidJob,
        policy: SafetyPolicy,
        model: ClusterModel,
        rng: np.random.Generator,
        interval_ns: int = 10 * NS_PER_S,
        sample_ns: int = NS_PER_S,
        window: int = 5,
        c: float = 1.0,
        s_sat: float = 0.95,
        beta: float = 1.2,
    ):
        self.engine = engine
        self.job = job
        self.policy = policy
        self.model = model
        self.rng = rng
        self.interval_ns = interval_ns
        self.sample_ns = sample_ns
        self.window = MetricWindow(window)
        self.c = c
        self.s_sat = s_sat
        self.beta = beta
        self.state = PolicyState(parallelism=dict(job.parallelism))
        self.sources = {op.id for op in job.logical.sources()}
        self.signals: Optional[Signals] = None
        self.rounds: list[ControlRound] = []
        self.series: list[dict] = []
        self.on_outcome: list[Callable[[ApplyOutcome], None]] = []
        self._throughput: list[float] = []
        self._since_round = 0

    def start(self) -> None:
        self.engine.schedule(self.sample_ns, self._sample)

    def _sample(self) -> None:
        now = self.engine.now
        samples = self.job.step(now - self.sample_ns, self.sample_ns)
        for op, sample in samples.items():
            self.window.push(op, sample)
        self._throughput.append(self.job.last_throughput)
        self._throughput = self._throughput[-self.window.size:]
        self.series.append({
            "t_s": now / NS_PER_S,
            "throughput": self.job.last_throughput,
            **{f"p_{op}": p for op, p in self.state.parallelism.items()},
            **{f"rate_{op}": samples[op].input_rate for op in self.sources},
        })
        self._since_round += self.sample_ns
        if self._since_round >= self.interval_ns:
            self._since_round = 0
            self._round()
        self.engine.schedule(self.sample_ns, self._sample)

    def _round(self) -> None:
        now = self.engine.now
        for op in self.sources:
            samples = self.window.samples.get(op)
            if samples:
                self.window.ingest_target[op] = float(np.mean([s.input_rate for s in samples]))
        self.signals = smooth(self.window, self.state.parallelism, self.sources, self.c,
                              self.s_sat, self.signals)
        decision = target_parallelism(self.signals, self.job.logical, self.state.parallelism,
                                      self.beta, self.policy.min_p, self.policy.max_p, now)
        throughput = float(np.mean(self._throughput)) if self._throughput else 0.0
        before = dict(self.state.parallelism)
        outcome = guard_and_apply(decision, self.policy, self.state, now, throughput)
        if outcome.kind in (ApplyKind.APPLIED, ApplyKind.ROLLED_BACK):
            self._rescale(before, self.state.parallelism)
        self.rounds.append(ControlRound(now / NS_PER_S, str(outcome), dict(self.state.parallelism),
                                        dict(decision.targets), dict(decision.demand),
                                        throughput))
        for callback in self.on_outcome:
            callback(outcome)

    def _rescale(self, before: dict[str, int], after: dict[str, int]) -> None:
        slots = self.model.slots_per_tm
        held = math.ceil(sum(before.values()) / slots)
        report = hot_update(held, self.job.logical.with_parallelism(after), self.model, self.rng)
        self.job.rescale(after, self.engine.now, report.total_ns)
        self.window = MetricWindow(self.window.size)
        self._throughput = []

    def timeline(self) -> pd.DataFrame:
        return pd.DataFrame(self.series)

    def rounds_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "time_s": r.time_s,
            "outcome": r.outcome,
            "throughput": r.throughput,
            **{f"p_{op}": p for op, p in r.parallelism.items()},
            **{f"target_{op}": p for op, p in r.targets.items()},
        } for r in self.rounds])
