"""
State Restore

Resolves a task's snapshot chain from the store and computes when it can
resume: eagerly after every chunk is fetched, or lazily after the manifest.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

from .lazy import LazyStateBackend
from .models import SnapshotHandle
from .store import SnapshotStore

logger = logging.getLogger(__name__)


class RestoreMode(str, Enum):
    EAGER = "eager"
    LAZY = "lazy"


@dataclass
class RestorePlan:
    blob: dict[tuple, Any]
    backend: Optional[LazyStateBackend]
    resume_after_ns: int
    total_bytes: int


def restore_state(
    handle: Optional[SnapshotHandle],
    store: SnapshotStore,
    mode: RestoreMode = RestoreMode.EAGER,
    chunks: int = 64,
) -> RestorePlan:
    """
    Build the restore plan for one task.

    A None handle is the job-start checkpoint: empty state, immediate resume.
    Raises StoreUnavailable when the store is down.
    """
    if handle is None:
        return RestorePlan({}, None, 0, 0)
    blob = store.get(handle.store_key)
    if not blob:
        return RestorePlan({}, None, 0, 0)

    total_bytes = handle.chain_bytes
    backend = LazyStateBackend.for_state(blob, chunks, total_bytes)
    if mode == RestoreMode.EAGER:
        delay = sum(store.latency(size)
                    for size, entries in zip(backend.chunk_bytes, backend.chunk_entries)
                    if entries)
        return RestorePlan(blob, None, delay, total_bytes)
    # manifest only
    return RestorePlan(blob, backend, store.latency(0), total_bytes)


def backoff_ns(attempt: int, base_ns: int, cap_ns: int) -> int:
    """Exponential retry delay: base * 2^attempt, capped."""
    return min(cap_ns, base_ns * (2 ** min(attempt, 62)))
