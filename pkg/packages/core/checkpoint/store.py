"""
Simulated Snapshot Store

Latency/size model of the persistent checkpoint store with an injectable
slow-upload hook and an availability switch.
"""
from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any, Callable, Optional

import numpy as np

if TYPE_CHECKING:
    from ..runtime.engine import Engine

logger = logging.getLogger(__name__)


class StoreUnavailable(Exception):
    """The store is down."""

    def __init__(self, store: str):
        super().__init__(f"store {store!r} unavailable")
        self.store = store


class SnapshotStore:
    """
    Blob store whose put completes after base + bytes * ns_per_byte, plus an
    added delay with probability p_slow.

    A completed put stays durable for the rest of the run.
    """

    def __init__(
        self,
        engine: Engine,
        rng: np.random.Generator,
        base_ns: int = 5_000_000,
        ns_per_byte: float = 1.0,
        p_slow: float = 0.0,
        slow_delay_ns: int = 0,
        name: str = "snapshot",
    ):
        self.engine = engine
        self.rng = rng
        self.name = name
        self.base_ns = base_ns
        self.ns_per_byte = ns_per_byte
        self.p_slow = p_slow
        self.slow_delay_ns = slow_delay_ns
        self.available = True
        self.blobs: dict[str, Any] = {}
        self.puts = 0
        self.slow_puts = 0

    def latency(self, size: int) -> int:
        return int(self.base_ns + size * self.ns_per_byte)

    def put(self, key: str, blob: Any, size: int,
            on_done: Optional[Callable[[bool], None]] = None) -> int:
        """Schedule an upload; returns its latency. Raises StoreUnavailable when down."""
        if not self.available:
            raise StoreUnavailable(self.name)
        latency = self.latency(size)
        if self.p_slow > 0 and self.rng.random() < self.p_slow:
            latency += self.slow_delay_ns
            self.slow_puts += 1
        self.puts += 1
        self.engine.schedule(latency, self._complete_put, key, blob, on_done)
        return latency

    def _complete_put(self, key: str, blob: Any, on_done: Optional[Callable[[bool], None]]) -> None:
        self.blobs[key] = blob
        if on_done is not None:
            on_done(True)

    def get(self, key: str) -> Any:
        if not self.available:
            raise StoreUnavailable(self.name)
        return self.blobs[key]

    def get_latency(self, size: int) -> Optional[int]:
        """Fetch latency for `size` bytes, or None while the store is down."""
        if not self.available:
            return None
        return self.latency(size)

    def set_slow(self, p_slow: float, slow_delay_ns: int) -> tuple[float, int]:
        previous = (self.p_slow, self.slow_delay_ns)
        self.p_slow = p_slow
        self.slow_delay_ns = slow_delay_ns
        return previous
