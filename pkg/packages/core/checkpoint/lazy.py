"""
Keyed State and Lazy Restore

Task-local keyed state with dirty tracking for incremental snapshots, and a
chunk residency map that lets a task resume before its state is fully
materialized.
"""
from __future__ import annotations

import logging
from typing import Any, Iterable, Optional

from ..seeding import stable_hash

logger = logging.getLogger(__name__)

DEFAULT_CHUNKS = 64


class StateAccessError(Exception):
    """A key was touched while its chunk was not resident."""

    def __init__(self, key: tuple, chunk: int):
        super().__init__(f"state key {key} read while chunk {chunk} is not resident")
        self.key = key
        self.chunk = chunk


def chunk_of(key: tuple, chunks: int) -> int:
    return stable_hash(key) % chunks


def copy_state(state: dict[tuple, Any]) -> dict[tuple, Any]:
    return {k: (list(v) if isinstance(v, list) else v) for k, v in state.items()}


class LazyStateBackend:
    """Residency of a restored snapshot's chunks."""

    def __init__(self, chunk_entries: list[int], chunk_bytes: list[int]):
        self.chunks = len(chunk_entries)
        self.chunk_entries = chunk_entries
        self.chunk_bytes = chunk_bytes
        # empty chunks hold nothing to fetch
        self.resident = [entries == 0 for entries in chunk_entries]
        self.in_flight: set[int] = set()
        self.prefetch_pos = 0

    @classmethod
    def for_state(cls, state: dict[tuple, Any], chunks: int,
                  total_bytes: int) -> "LazyStateBackend":
        entries = [0] * chunks
        for key in state:
            entries[chunk_of(key, chunks)] += 1
        n = max(1, len(state))
        return cls(entries, [total_bytes * e // n for e in entries])

    @property
    def all_resident(self) -> bool:
        return all(self.resident)

    def is_resident(self, key: tuple) -> bool:
        return self.resident[chunk_of(key, self.chunks)]

    def missing_chunks(self, keys: Iterable[tuple]) -> list[int]:
        missing = []
        for key in keys:
            c = chunk_of(key, self.chunks)
            if not self.resident[c] and c not in missing:
                missing.append(c)
        return missing

    def next_prefetch(self) -> Optional[int]:
        """Next chunk in manifest order that is neither resident nor being fetched."""
        while self.prefetch_pos < self.chunks:
            c = self.prefetch_pos
            self.prefetch_pos += 1
            if not self.resident[c] and c not in self.in_flight:
                return c
        return None

    def mark_resident(self, chunk: int) -> None:
        self.resident[chunk] = True
        self.in_flight.discard(chunk)


class KeyedStateStore:
    """Dict-backed keyed state with dirty-key tracking and residency checks."""

    def __init__(self, chunks: int = DEFAULT_CHUNKS):
        self.data: dict[tuple, Any] = {}
        self.dirty: set[tuple] = set()
        self.chunks = chunks
        self.lazy: Optional[LazyStateBackend] = None

    def _check(self, key: tuple) -> None:
        lazy = self.lazy
        if lazy is not None and not lazy.is_resident(key):
            raise StateAccessError(key, chunk_of(key, lazy.chunks))

    def get(self, key: tuple, default: Any = None) -> Any:
        self._check(key)
        return self.data.get(key, default)

    def put(self, key: tuple, value: Any) -> None:
        self._check(key)
        self.data[key] = value
        self.dirty.add(key)

    def incr(self, key: tuple, amount: int = 1) -> int:
        value = self.get(key, 0) + amount
        self.put(key, value)
        return value

    def delete(self, key: tuple) -> None:
        self._check(key)
        if self.data.pop(key, None) is not None:
            self.dirty.add(key)

    def contains(self, key: tuple) -> bool:
        self._check(key)
        return key in self.data

    def items_in(self, namespace: int) -> list[tuple[tuple, Any]]:
        """Entries of one namespace regardless of residency (bookkeeping only)."""
        return [(k, v) for k, v in self.data.items() if k[0] == namespace]

    def snapshot(self) -> tuple[dict[tuple, Any], int]:
        """Full copy of the state and the number of entries changed since the last snapshot."""
        changed = len(self.dirty)
        self.dirty = set()
        return copy_state(self.data), changed

    def restore(self, blob: dict[tuple, Any], lazy: Optional[LazyStateBackend] = None) -> None:
        self.data = copy_state(blob)
        self.dirty = set()
        self.lazy = lazy if lazy is not None and not lazy.all_resident else None

    def settle(self) -> None:
        """Drop the residency map once every chunk is resident."""
        if self.lazy is not None and self.lazy.all_resident:
            self.lazy = None

    def __len__(self) -> int:
        return len(self.data)
