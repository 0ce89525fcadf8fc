"""
Scaling Signals

Windowed operator metrics, smoothing with saturated-signal substitution, and
demand propagation to target parallelism.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..graph.models import LogicalGraph, OperatorKind

logger = logging.getLogger(__name__)

EPSILON = 1e-9


@dataclass(frozen=True)
class OperatorSample:
    input_rate: float
    processed_rate: float
    busy: float
    backlog: float = 0.0


class MetricWindow:
    """Last W samples per operator plus the ingest target of every source."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"window size must be >= 1, got {size}")
        self.size = size
        self.samples: dict[str, deque[OperatorSample]] = {}
        self.ingest_target: dict[str, float] = {}

    def push(self, op_id: str, sample: OperatorSample) -> None:
        busy = min(1.0, max(0.0, sample.busy))
        if busy != sample.busy:
            sample = OperatorSample(sample.input_rate, sample.processed_rate, busy, sample.backlog)
        self.samples.setdefault(op_id, deque(maxlen=self.size)).append(sample)

    def __len__(self) -> int:
        return min((len(s) for s in self.samples.values()), default=0)


@dataclass
class Signals:
    true_rate: dict[str, Optional[float]] = field(default_factory=dict)
    demand_sources: dict[str, float] = field(default_factory=dict)
    input_rate: dict[str, float] = field(default_factory=dict)
    processed_rate: dict[str, float] = field(default_factory=dict)
    busy: dict[str, float] = field(default_factory=dict)
    backlog: dict[str, float] = field(default_factory=dict)
    rejected: set[str] = field(default_factory=set)


@dataclass
class ScalingDecision:
    targets: dict[str, int]
    reasons: dict[str, str] = field(default_factory=dict)
    time_ns: int = 0
    demand: dict[str, float] = field(default_factory=dict)


def smooth(
    window: MetricWindow,
    parallelism: dict[str, int],
    sources: set[str],
    c: float = 1.0,
    s_sat: float = 0.95,
    previous: Optional[Signals] = None,
) -> Signals:
    """
    Average each operator's samples and derive its true per-instance rate.

    Source busy time is scaled by the correction factor c. A mean busy fraction
    of at least s_sat is treated as fully busy. A zero busy fraction with
    nonzero processed rate is rejected and the previous true rate is held.
    """
    if not window.samples or len(window) == 0:
        raise ValueError("metric window is empty")
    signals = Signals(demand_sources=dict(window.ingest_target))
    for op_id, samples in window.samples.items():
        input_rate = float(np.mean([s.input_rate for s in samples]))
        processed = float(np.mean([s.processed_rate for s in samples]))
        busy = float(np.mean([s.busy for s in samples]))
        if op_id in sources:
            busy = min(1.0, busy * c)
        signals.input_rate[op_id] = input_rate
        signals.processed_rate[op_id] = processed
        signals.busy[op_id] = busy
        signals.backlog[op_id] = float(samples[-1].backlog)

        p = max(1, parallelism.get(op_id, 1))
        if busy <= 0.0:
            if processed > 0.0:
                signals.rejected.add(op_id)
                held = previous.true_rate.get(op_id) if previous is not None else None
                signals.true_rate[op_id] = held
                logger.debug(f"Rejected busy=0 signal for {op_id}, holding {held}")
            else:
                signals.true_rate[op_id] = None
            continue
        effective = 1.0 if busy >= s_sat else busy
        signals.true_rate[op_id] = processed / effective / p
    return signals


def target_parallelism(
    signals: Signals,
    logical: LogicalGraph,
    current: dict[str, int],
    beta: float = 1.2,
    min_p: int = 1,
    max_p: int = 256,
    time_ns: int = 0,
) -> ScalingDecision:
    """
    Propagate source demand through the graph and size every scalable operator.

    demand(source) = ingest target * beta; demand(op) = sum over upstream u of
    demand(u) * selectivity(u); target = ceil(demand / true rate), clamped.
    Sources and non-scalable operators keep their parallelism.
    """
    specs = logical.operator_map
    demand: dict[str, float] = {}
    targets: dict[str, int] = {}
    reasons: dict[str, str] = {}
    for op_id in logical.topological_order():
        spec = specs[op_id]
        if spec.kind == OperatorKind.SOURCE:
            demand[op_id] = signals.demand_sources.get(op_id, 0.0) * beta
            targets[op_id] = current.get(op_id, spec.parallelism)
            reasons[op_id] = "source"
            continue
        demand[op_id] = sum(demand[e.source] * specs[e.source].selectivity
                            for e in logical.upstream_edges(op_id))
        held = current.get(op_id, spec.parallelism)
        if not logical.is_scalable(op_id):
            targets[op_id] = held
            reasons[op_id] = "not_scalable"
            continue
        rate = signals.true_rate.get(op_id)
        if not rate:
            targets[op_id] = held
            reasons[op_id] = "unscalable_signal"
            continue
        wanted = math.ceil(demand[op_id] / rate - EPSILON)
        targets[op_id] = min(max_p, max(min_p, wanted))
        reasons[op_id] = "demand"
    return ScalingDecision(targets, reasons, time_ns, demand)
