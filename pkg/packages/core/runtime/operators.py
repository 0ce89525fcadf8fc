"""
Operator Implementations

Per-record processing for every operator kind. Terminal operators deliver
their outputs to an output ledger kept in task state.
"""
from __future__ import annotations

import logging
from typing import Optional

from ..checkpoint.lazy import KeyedStateStore
from ..graph.models import OperatorKind, OperatorSpec
from ..seeding import TWO_64, stable_hash
from .records import JOIN, LEDGER, WINDOW, Record

logger = logging.getLogger(__name__)

JOIN_SWEEP_NS = 1_000_000_000


def window_key(key: int, window: int) -> int:
    """Output key of a (key, window) update."""
    return stable_hash(key, window) >> 1


class Operator:
    """Base operator: identity transfer."""

    kind = OperatorKind.SINK

    def __init__(self, spec: OperatorSpec, terminal: bool = False, track_duplicates: bool = False):
        self.spec = spec
        self.terminal = terminal
        self.track_duplicates = track_duplicates
        self.salt = stable_hash(spec.id)

    @property
    def deterministic(self) -> bool:
        return self.kind.deterministic

    def process(self, record: Record, state: KeyedStateStore, now: int) -> list[Record]:
        return [record.derive()]

    def output_key(self, record: Record) -> int:
        return record.key

    def operator_keys(self, record: Record) -> tuple[tuple, ...]:
        return ()

    def state_keys(self, record: Record) -> tuple[tuple, ...]:
        """Every state key processing `record` may touch."""
        keys = self.operator_keys(record)
        if self.terminal:
            keys = keys + ((LEDGER, self.output_key(record)),)
        return keys


class SinkOperator(Operator):
    kind = OperatorKind.SINK


class SourceOperator(Operator):
    kind = OperatorKind.SOURCE


class FilterOperator(Operator):
    """Deterministic per-record pass decision at the configured selectivity."""

    kind = OperatorKind.FILTER

    def __init__(self, spec: OperatorSpec, terminal: bool = False, track_duplicates: bool = False):
        super().__init__(spec, terminal, track_duplicates)
        self.cutoff = min(1.0, spec.selectivity) * TWO_64

    def passes(self, record: Record) -> bool:
        return stable_hash(record.rid, self.salt) < self.cutoff

    def process(self, record: Record, state: KeyedStateStore, now: int) -> list[Record]:
        return [record.derive()] if self.passes(record) else []


class LookupOperator(Operator):
    """Stateless idempotent enrichment."""

    kind = OperatorKind.LOOKUP


class WindowCountOperator(Operator):
    """Tumbling-window count per key over the record's event time."""

    kind = OperatorKind.WINDOW_COUNT

    def __init__(self, spec: OperatorSpec, window_ns: int, terminal: bool = False,
                 track_duplicates: bool = False):
        super().__init__(spec, terminal, track_duplicates)
        self.window_ns = window_ns

    def window_of(self, record: Record) -> int:
        return record.event_ns // self.window_ns

    def output_key(self, record: Record) -> int:
        return window_key(record.key, self.window_of(record))

    def operator_keys(self, record: Record) -> tuple[tuple, ...]:
        return ((WINDOW, record.key, self.window_of(record)),)

    def process(self, record: Record, state: KeyedStateStore, now: int) -> list[Record]:
        state.incr((WINDOW, record.key, self.window_of(record)))
        return [record.derive(key=self.output_key(record))]


class JoinOperator(Operator):
    """
    Two-sided stitch on key.

    Unmatched fragments wait in state until the join window expires; expired
    fragments are inherent misses, not fault-induced drops.
    """

    kind = OperatorKind.JOIN

    def __init__(self, spec: OperatorSpec, timeout_ns: int, terminal: bool = False,
                 track_duplicates: bool = False):
        super().__init__(spec, terminal, track_duplicates)
        self.timeout_ns = timeout_ns

    def operator_keys(self, record: Record) -> tuple[tuple, ...]:
        return ((JOIN, record.key),)

    def process(self, record: Record, state: KeyedStateStore, now: int) -> list[Record]:
        slot = (JOIN, record.key)
        pending: list = state.get(slot) or []
        for i, (side, rid, emit_ns, _arrival) in enumerate(pending):
            if side != record.side:
                rest = pending[:i] + pending[i + 1:]
                if rest:
                    state.put(slot, rest)
                else:
                    state.delete(slot)
                return [Record(
                    rid=stable_hash(min(rid, record.rid), max(rid, record.rid)),
                    key=record.key,
                    emit_ns=max(emit_ns, record.emit_ns),
                    event_ns=max(emit_ns, record.event_ns),
                )]
        state.put(slot, pending + [(record.side, record.rid, record.emit_ns, now)])
        return []

    def sweep(self, state: KeyedStateStore, now: int) -> int:
        """Expire fragments older than the join window; returns the number expired."""
        expired = 0
        for slot, pending in state.items_in(JOIN):
            if state.lazy is not None and not state.lazy.is_resident(slot):
                continue
            kept = [f for f in pending if now - f[3] < self.timeout_ns]
            expired += len(pending) - len(kept)
            if not kept:
                state.delete(slot)
            elif len(kept) != len(pending):
                state.put(slot, kept)
        return expired


def build_operator(
    spec: OperatorSpec,
    terminal: bool,
    window_ns: int = 5_000_000_000,
    join_timeout_ns: int = 30_000_000_000,
    track_duplicates: bool = False,
) -> Operator:
    kind = spec.kind
    if kind == OperatorKind.SOURCE:
        return SourceOperator(spec, terminal, track_duplicates)
    if kind == OperatorKind.FILTER:
        return FilterOperator(spec, terminal, track_duplicates)
    if kind == OperatorKind.LOOKUP:
        return LookupOperator(spec, terminal, track_duplicates)
    if kind == OperatorKind.WINDOW_COUNT:
        return WindowCountOperator(spec, window_ns, terminal, track_duplicates)
    if kind == OperatorKind.JOIN:
        return JoinOperator(spec, join_timeout_ns, terminal, track_duplicates)
    return SinkOperator(spec, terminal, track_duplicates)


def source_rid(source_slot: int, offset: int) -> int:
    """Record id of a source offset; unique across source tasks."""
    return (source_slot << 40) | offset


def offset_of(rid: Optional[int]) -> int:
    return (rid or 0) & ((1 << 40) - 1)
