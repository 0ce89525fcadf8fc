"""
Workload Generators

Preset dataflow graphs and offset-addressable source feeds. A record's due
time and key are pure functions of (seed, source slot, offset), so a source
rewound to an older offset replays exactly the records it emitted before.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from ..config import ConfigError, WorkloadConfig
from ..graph.models import EdgeSpec, LogicalGraph, OperatorKind, OperatorSpec, TaskId, load_job_file
from ..runtime.engine import NS_PER_MS, NS_PER_S
from ..runtime.task import SourceFeed
from ..seeding import RngStreams
from ..shuffle.strategies import ShuffleStrategy

logger = logging.getLogger(__name__)

KEY_CHUNK = 4096
_MAX_CACHED_CHUNKS = 512


# ============================================================================
# Rate Profiles
# ============================================================================

@dataclass(frozen=True)
class RateProfile:
    """
    Piecewise-constant source rate in records/s.

    ``starts_s[i]`` is where segment i begins; the last segment extends
    forever. Record k is due when the cumulative count reaches k.
    """
    starts_s: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.starts_s or len(self.starts_s) != len(self.rates):
            raise ConfigError("rate profile needs matching start times and rates",
                              location="workload")
        if self.starts_s[0] != 0:
            raise ConfigError("rate profile must start at t=0", location="workload.rate_steps")
        if any(b <= a for a, b in zip(self.starts_s, self.starts_s[1:])):
            raise ConfigError("rate steps must be strictly increasing in time",
                              location="workload.rate_steps")
        if any(r <= 0 for r in self.rates):
            raise ConfigError("rates must be > 0", location="workload")

    @classmethod
    def constant(cls, rate: float) -> "RateProfile":
        return cls((0.0,), (float(rate),))

    @classmethod
    def steps(cls, steps: list[tuple[float, float]]) -> "RateProfile":
        ordered = sorted((float(t), float(r)) for t, r in steps)
        if ordered and ordered[0][0] > 0:
            ordered.insert(0, (0.0, ordered[0][1]))
        return cls(tuple(t for t, _ in ordered), tuple(r for _, r in ordered))

    @classmethod
    def from_trace(cls, path: Union[str, Path]) -> "RateProfile":
        """Load a ``t_s,rate`` CSV trace."""
        try:
            df = pd.read_csv(path)
        except FileNotFoundError as e:
            raise ConfigError(f"rate trace not found: {path}",
                              location="workload.rate_trace") from e
        missing = {"t_s", "rate"} - set(df.columns)
        if missing:
            raise ConfigError(f"rate trace lacks columns {sorted(missing)}",
                              location="workload.rate_trace")
        df = df.sort_values("t_s")
        return cls.steps(list(zip(df["t_s"].tolist(), df["rate"].tolist())))

    @classmethod
    def from_config(cls, config: WorkloadConfig) -> "RateProfile":
        if config.rate_trace:
            return cls.from_trace(config.rate_trace)
        if config.rate_steps:
            return cls.steps(config.rate_steps)
        return cls.constant(config.rate)

    def scaled(self, factor: float) -> "RateProfile":
        return RateProfile(self.starts_s, tuple(r * factor for r in self.rates))

    @property
    def _cumulative(self) -> np.ndarray:
        widths = np.diff(np.asarray(self.starts_s))
        return np.concatenate(([0.0], np.cumsum(widths * np.asarray(self.rates[:-1]))))

    def rate_at(self, t_s: float) -> float:
        i = int(np.searchsorted(self.starts_s, t_s, side="right")) - 1
        return self.rates[max(0, i)]

    def count_until(self, t_s: float) -> float:
        """Cumulative record count over [0, t_s)."""
        cum = self._cumulative
        i = max(0, int(np.searchsorted(self.starts_s, t_s, side="right")) - 1)
        return float(cum[i] + (t_s - self.starts_s[i]) * self.rates[i])

    def limit(self, duration_s: float) -> int:
        """Number of records due strictly before `duration_s`."""
        return max(0, math.ceil(self.count_until(duration_s) - 1e-9))

    def due_times_ns(self, offsets: np.ndarray) -> np.ndarray:
        cum = self._cumulative
        offsets = np.asarray(offsets, dtype=float)
        i = np.searchsorted(cum, offsets, side="right") - 1
        starts = np.asarray(self.starts_s)[i]
        rates = np.asarray(self.rates)[i]
        return np.floor((starts + (offsets - cum[i]) / rates) * NS_PER_S).astype(np.int64)

    def due_fn(self):
        """Scalar due-time function for the source hot path."""
        if len(self.rates) == 1:
            period = NS_PER_S / self.rates[0]
            return lambda k: int(k * period)
        cum = self._cumulative.tolist()
        starts = list(self.starts_s)
        rates = list(self.rates)

        def due(k: int) -> int:
            i = int(np.searchsorted(cum, k, side="right")) - 1
            return int((starts[i] + (k - cum[i]) / rates[i]) * NS_PER_S)

        return due


# ============================================================================
# Key Streams
# ============================================================================

def zipf_cdf(key_space: int, s: float) -> np.ndarray:
    """CDF of a zipf(s) distribution bounded to `key_space` ranks."""
    weights = 1.0 / np.arange(1, key_space + 1, dtype=float) ** s
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


class KeyStream:
    """
    Keys of one source task as a function of the offset.

    Keys are drawn in fixed chunks from a generator derived from
    (seed, "workload", slot, chunk); s = 0 is uniform. Rank 1 is key 0.
    """

    def __init__(self, streams: RngStreams, slot: int, key_space: int, zipf_s: float = 0.0):
        self.streams = streams
        self.slot = slot
        self.key_space = key_space
        self.zipf_s = zipf_s
        self._cdf = zipf_cdf(key_space, zipf_s) if zipf_s > 0 else None
        self._chunks: dict[int, np.ndarray] = {}

    def _chunk(self, index: int) -> np.ndarray:
        keys = self._chunks.get(index)
        if keys is None:
            if len(self._chunks) >= _MAX_CACHED_CHUNKS:
                self._chunks.clear()
            rng = self.streams.derive("workload", self.slot, index)
            if self._cdf is None:
                keys = rng.integers(0, self.key_space, size=KEY_CHUNK)
            else:
                keys = np.searchsorted(self._cdf, rng.random(KEY_CHUNK), side="right")
                keys = np.minimum(keys, self.key_space - 1)
            self._chunks[index] = keys
        return keys

    def __call__(self, offset: int) -> int:
        return int(self._chunk(offset // KEY_CHUNK)[offset % KEY_CHUNK])

    def take(self, n: int) -> np.ndarray:
        """First n keys as an array."""
        chunks = [self._chunk(i) for i in range(math.ceil(n / KEY_CHUNK))]
        return np.concatenate(chunks)[:n] if chunks else np.empty(0, dtype=np.int64)


# ============================================================================
# Preset Graphs
# ============================================================================

def _op(op_id: str, kind: OperatorKind, parallelism: int, selectivity: float = 1.0) -> OperatorSpec:
    return OperatorSpec(op_id, kind, parallelism, selectivity)


def _edge(source: str, target: str, name: str, params: Optional[dict] = None) -> EdgeSpec:
    return EdgeSpec(source, target, ShuffleStrategy.parse(name, params))


def build_graph(config: WorkloadConfig, job_file: Optional[str] = None) -> LogicalGraph:
    """Logical graph of the configured workload; a job file wins over the preset."""
    if job_file:
        return load_job_file(job_file)
    p = config.parallelism
    src_p = config.source_parallelism or p
    shuffle, params = config.shuffle, config.shuffle_params
    kind = config.kind
    if kind == "q2":
        graph = LogicalGraph(
            [_op("source", OperatorKind.SOURCE, src_p),
             _op("filter", OperatorKind.FILTER, p, config.selectivity)],
            [_edge("source", "filter", shuffle, params)],
        )
    elif kind == "q12":
        graph = LogicalGraph(
            [_op("source", OperatorKind.SOURCE, src_p),
             _op("window", OperatorKind.WINDOW_COUNT, p)],
            [_edge("source", "window", "keyhash")],
        )
    elif kind == "ds":
        ids = ["source"] + [f"lookup_{i}" for i in range(1, config.stages - 1)] + ["sink"]
        kinds = ([OperatorKind.SOURCE] + [OperatorKind.LOOKUP] * (config.stages - 2)
                 + [OperatorKind.SINK])
        graph = LogicalGraph(
            [_op(i, k, p) for i, k in zip(ids, kinds)],
            [_edge(a, b, "forward") for a, b in zip(ids, ids[1:])],
        )
    elif kind == "ds_scalable":
        graph = LogicalGraph(
            [_op("source", OperatorKind.SOURCE, src_p), _op("sink", OperatorKind.SINK, p)],
            [_edge("source", "sink", shuffle, params)],
        )
    else:
        graph = LogicalGraph(
            [_op("source_a", OperatorKind.SOURCE, src_p),
             _op("source_b", OperatorKind.SOURCE, src_p),
             _op("join", OperatorKind.JOIN, p),
             _op("sink", OperatorKind.SINK, p)],
            [_edge("source_a", "join", "keyhash"),
             _edge("source_b", "join", "keyhash"),
             _edge("join", "sink", "forward")],
        )
    graph.validate()
    return graph


def service_times(graph: LogicalGraph, config: WorkloadConfig) -> dict[str, int]:
    """Per-operator service time in ns; sources emit without service cost."""
    result = {}
    for op in graph.operators:
        ms = config.service_overrides_ms.get(op.id, config.service_ms)
        result[op.id] = 0 if op.kind == OperatorKind.SOURCE else int(ms * NS_PER_MS)
    return result


def build_feeds(graph: LogicalGraph, config: WorkloadConfig,
                streams: RngStreams) -> dict[TaskId, SourceFeed]:
    """
    One feed per source task.

    The configured rate applies per source operator and is split evenly
    across its tasks. Slots number source tasks in graph order.
    """
    profile = RateProfile.from_config(config)
    feeds: dict[TaskId, SourceFeed] = {}
    slot = 0
    for op in graph.sources():
        share = profile.scaled(1.0 / op.parallelism)
        limit = share.limit(config.duration_s)
        due = share.due_fn()
        for index in range(op.parallelism):
            keys = KeyStream(streams, slot, config.key_space, config.zipf_s)
            feeds[TaskId(op.id, index)] = SourceFeed(due=due, key=keys, limit=limit)
            slot += 1
    logger.debug(f"Built {len(feeds)} source feeds for workload {config.kind}")
    return feeds


def generate(config: WorkloadConfig, seed: int, until_s: Optional[float] = None) -> pd.DataFrame:
    """
    Records every source task emits up to `until_s` (default: the duration).

    Columns: operator, task, offset, due_ns, key. Offline view of the same
    streams the simulation replays.
    """
    graph = build_graph(config)
    streams = RngStreams(seed)
    profile = RateProfile.from_config(config)
    horizon = min(until_s if until_s is not None else config.duration_s, config.duration_s)
    frames = []
    slot = 0
    for op in graph.sources():
        share = profile.scaled(1.0 / op.parallelism)
        n = share.limit(horizon)
        offsets = np.arange(n)
        due = share.due_times_ns(offsets)
        for index in range(op.parallelism):
            keys = KeyStream(streams, slot, config.key_space, config.zipf_s).take(n)
            frames.append(pd.DataFrame({
                "operator": op.id,
                "task": index,
                "offset": offsets,
                "due_ns": due,
                "key": keys,
            }))
            slot += 1
    if not frames:
        return pd.DataFrame(columns=["operator", "task", "offset", "due_ns", "key"])
    return pd.concat(frames, ignore_index=True)
