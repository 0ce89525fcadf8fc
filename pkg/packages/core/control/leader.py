"""
Leader Metadata HA

Leader records are written synchronously to a primary and a fallback
coordination store. Task managers resolve the leader from the primary, fall
back to the redundant copy, and terminate jobs only when neither yields a
record consistent with their in-memory view.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

from .models import CoordinationRole, CoordinationStore, CoordinationUnavailable, LeaderRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LeaderInfo:
    record: LeaderRecord
    source: CoordinationRole

    @property
    def leader_id(self) -> str:
        return self.record.leader_id

    @property
    def term(self) -> int:
        return self.record.term


@dataclass(frozen=True)
class TerminateJobs:
    reason: str  # both_unavailable | inconsistent


LeaderOutcome = Union[LeaderInfo, TerminateJobs]


def _conflicts(record: LeaderRecord, cached: Optional[LeaderRecord]) -> bool:
    if cached is None:
        return False
    if record.term < cached.term:
        return True
    return record.term == cached.term and record.leader_id != cached.leader_id


def resolve_leader(primary: CoordinationStore, fallback: CoordinationStore,
                   cached: Optional[LeaderRecord]) -> LeaderOutcome:
    """
    Resolve the current leader.

    Primary first; on failure the fallback copy, which must agree with the
    cached view (no older term, same leader at equal term).
    """
    try:
        record = primary.read()
        if record is not None:
            return LeaderInfo(record, CoordinationRole.PRIMARY)
    except CoordinationUnavailable:
        logger.debug("Primary coordination store unavailable, reading fallback")

    try:
        record = fallback.read()
    except CoordinationUnavailable:
        return TerminateJobs("both_unavailable")
    if record is None or _conflicts(record, cached):
        return TerminateJobs("inconsistent")
    return LeaderInfo(record, CoordinationRole.FALLBACK)


class LeaderService:
    """Leader election bookkeeping plus the task managers' cached view."""

    def __init__(self, primary: Optional[CoordinationStore] = None,
                 fallback: Optional[CoordinationStore] = None):
        self.primary = primary or CoordinationStore(CoordinationRole.PRIMARY)
        self.fallback = fallback or CoordinationStore(CoordinationRole.FALLBACK)
        self.cached: Optional[LeaderRecord] = None
        self.term = 0
        self.terminations = 0
        self.failovers = 0

    def elect(self, leader_id: str, now_ns: int = 0) -> LeaderRecord:
        """New leader: bump the term and write both stores synchronously."""
        self.term += 1
        record = LeaderRecord(leader_id, self.term, now_ns)
        for store in (self.primary, self.fallback):
            try:
                store.write(record)
            except CoordinationUnavailable:
                logger.warning(f"Leader term {self.term} not written to {store.role.value} store")
        if self.term > 1:
            self.failovers += 1
        logger.info(f"Leader {leader_id} elected for term {self.term}")
        return record

    def check(self) -> LeaderOutcome:
        """Lease check: re-resolve the leader and refresh the cached view."""
        outcome = resolve_leader(self.primary, self.fallback, self.cached)
        if isinstance(outcome, LeaderInfo):
            self.cached = outcome.record
        else:
            self.terminations += 1
            logger.warning(f"Leader resolution failed ({outcome.reason}): terminating jobs")
        return outcome
