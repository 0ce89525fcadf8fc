"""
Run Metrics Collection

Hooks the dataflow's consume listener for throughput buckets and latency
samples, and samples backlog on a fixed virtual period.
"""
from __future__ import annotations

import logging
from collections import Counter
from typing import TYPE_CHECKING, Optional

import numpy as np
import pandas as pd

from ..runtime.engine import NS_PER_MS, NS_PER_S
from .models import LatencySummary

if TYPE_CHECKING:
    from ..runtime.dataflow import Dataflow
    from ..runtime.engine import Engine
    from ..runtime.records import Record
    from ..runtime.task import TaskRuntime

logger = logging.getLogger(__name__)

STEADY_FROM = 0.2  # fraction of the horizon treated as warm-up


class MetricsCollector:
    """Per-run series; one instance per simulation."""

    def __init__(self, engine: "Engine", dataflow: "Dataflow", bucket_ns: int = NS_PER_S):
        self.engine = engine
        self.dataflow = dataflow
        self.bucket_ns = bucket_ns
        self.counts: Counter[int] = Counter()
        self._lat_at: list[int] = []
        self._lat_ns: list[int] = []
        self.backlog_rows: list[dict] = []
        self._until_ns: Optional[int] = None
        dataflow.consume_listener = self.on_consume

    def start(self, until_ns: int) -> None:
        self._until_ns = until_ns
        self.engine.schedule(self.bucket_ns, self._sample)

    def on_consume(self, task: "TaskRuntime", record: "Record", now: int) -> None:
        self.counts[now // self.bucket_ns] += 1
        self._lat_at.append(now)
        self._lat_ns.append(now - record.emit_ns)

    def _sample(self) -> None:
        now = self.engine.now
        by_op = self.dataflow.backlog_by_operator()
        self.backlog_rows.append({
            "t_s": now / NS_PER_S,
            "backlog": sum(by_op.values()),
            "in_flight": self.dataflow.in_flight(),
            **{f"backlog_{op}": n for op, n in sorted(by_op.items())},
        })
        if self._until_ns is None or now + self.bucket_ns <= self._until_ns:
            self.engine.schedule(self.bucket_ns, self._sample)

    # ------------------------------------------------------------------
    # Derived series
    # ------------------------------------------------------------------

    def qps(self, end_ns: int) -> list[float]:
        """Records/s per bucket from t=0 to end_ns."""
        buckets = max(1, -(-end_ns // self.bucket_ns))
        width = self.bucket_ns / NS_PER_S
        return [self.counts.get(b, 0) / width for b in range(buckets)]

    def steady_qps(self, horizon_ns: int) -> float:
        """Mean QPS over the post-warm-up part of the source horizon."""
        series = self.qps(horizon_ns)
        start = int(len(series) * STEADY_FROM)
        tail = series[start:] or series
        return float(np.mean(tail)) if tail else 0.0

    def series_frame(self, end_ns: int) -> pd.DataFrame:
        width = self.bucket_ns / NS_PER_S
        qps = pd.DataFrame({
            "t_s": [b * width for b in range(len(self.qps(end_ns)))],
            "qps": self.qps(end_ns),
        })
        if not self.backlog_rows:
            return qps
        # a backlog sample taken at the end of bucket b describes bucket b
        backlog = pd.DataFrame(self.backlog_rows)
        backlog["t_s"] = (backlog["t_s"] - width).round(9)
        qps["t_s"] = qps["t_s"].round(9)
        return qps.merge(backlog, on="t_s", how="left").fillna(0)

    def latency(self, windows: list[tuple[int, int]]) -> LatencySummary:
        """Latency percentiles overall and outside the given [start, end] windows."""
        if not self._lat_ns:
            return LatencySummary()
        at = np.asarray(self._lat_at, dtype=np.int64)
        values = np.asarray(self._lat_ns, dtype=np.int64)
        outside = np.ones(len(at), dtype=bool)
        for start, end in windows:
            outside &= ~((at >= start) & (at <= end))
        kept = values[outside]
        return LatencySummary(
            samples=int(len(values)),
            p50_ms=float(np.percentile(values, 50)) / NS_PER_MS,
            p99_ms=float(np.percentile(values, 99)) / NS_PER_MS,
            p99_outside_recovery_ms=(float(np.percentile(kept, 99)) / NS_PER_MS
                                     if len(kept) else None),
            samples_outside_recovery=int(len(kept)),
        )

    @property
    def backlog_max(self) -> int:
        return max((int(r["backlog"]) for r in self.backlog_rows), default=0)
