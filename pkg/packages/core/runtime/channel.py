"""
Credit-Based Channels

One bounded credit pool per channel. A producer that finds no credit parks
its record as a waiter; the record is enqueued the moment a credit returns
and the producer is notified. Barriers bypass credits but keep FIFO order.
"""
from __future__ import annotations

from collections import deque
from enum import Enum
from typing import Callable, Optional, Union

from ..graph.models import TaskId
from .records import Barrier, Record

Item = Union[Record, Barrier]


class SendOutcome(str, Enum):
    ENQUEUED = "enqueued"
    BLOCKED = "blocked"
    DROPPED = "dropped"


class Channel:
    __slots__ = (
        "producer", "consumer", "edge", "descriptor", "side", "capacity", "delay_ns",
        "queue", "waiters", "consumer_alive", "backlog", "on_push", "sent", "taken",
    )

    def __init__(
        self,
        producer: TaskId,
        consumer: TaskId,
        edge: int = 0,
        descriptor: int = 0,
        capacity: int = 32,
        side: int = 0,
    ):
        self.producer = producer
        self.consumer = consumer
        self.edge = edge
        self.descriptor = descriptor
        self.side = side
        self.capacity = capacity
        self.delay_ns = 0
        self.queue: deque[tuple[int, Item]] = deque()
        self.waiters: deque[tuple[Record, Optional[Callable[[], None]]]] = deque()
        self.consumer_alive = True
        self.backlog = 0
        self.on_push: Optional[Callable[[int], None]] = None
        self.sent = 0
        self.taken = 0

    @property
    def credits(self) -> int:
        return max(0, self.capacity - self.backlog)

    def send(self, record: Record, now: int,
             on_unblock: Optional[Callable[[], None]] = None) -> SendOutcome:
        if not self.consumer_alive:
            return SendOutcome.DROPPED
        if self.backlog >= self.capacity or self.waiters:
            self.waiters.append((record, on_unblock))
            return SendOutcome.BLOCKED
        self._push(record, now)
        return SendOutcome.ENQUEUED

    def send_barrier(self, barrier: Barrier, now: int) -> bool:
        if not self.consumer_alive:
            return False
        self.queue.append((now + self.delay_ns, barrier))
        if self.on_push is not None:
            self.on_push(now + self.delay_ns)
        return True

    def _push(self, record: Record, now: int) -> None:
        visible_at = now + self.delay_ns
        self.queue.append((visible_at, record))
        self.backlog += 1
        self.sent += 1
        if self.on_push is not None:
            self.on_push(visible_at)

    def head(self, now: int) -> Optional[Item]:
        """Head element if it is visible at `now`."""
        if self.queue and self.queue[0][0] <= now:
            return self.queue[0][1]
        return None

    def next_visible_at(self) -> Optional[int]:
        return self.queue[0][0] if self.queue else None

    def take(self, now: int) -> Item:
        _, item = self.queue.popleft()
        if isinstance(item, Record):
            self.backlog -= 1
            self.taken += 1
            self._admit_waiters(now)
        return item

    def _admit_waiters(self, now: int) -> None:
        # FIFO among blocked producers: exactly one waiter per freed credit.
        while self.waiters and self.backlog < self.capacity:
            record, on_unblock = self.waiters.popleft()
            self._push(record, now)
            if on_unblock is not None:
                on_unblock()

    def push_front(self, record: Record, now: int) -> None:
        """Return an in-service record to the head (standby promotion)."""
        self.queue.appendleft((now, record))
        self.backlog += 1

    def set_capacity(self, capacity: int, now: int) -> None:
        self.capacity = max(1, capacity)
        self._admit_waiters(now)

    def clear(self) -> tuple[int, list[Callable[[], None]]]:
        """
        Drop queued records and waiters.

        Returns the number of records discarded and the unblock callbacks of
        producers whose parked records were discarded.
        """
        dropped = sum(1 for _, item in self.queue if isinstance(item, Record))
        self.queue.clear()
        self.backlog = 0
        callbacks = []
        for _, on_unblock in self.waiters:
            dropped += 1
            if on_unblock is not None:
                callbacks.append(on_unblock)
        self.waiters.clear()
        return dropped, callbacks

    def discard_waiters(self) -> int:
        """Forget parked records without notifying their (dead) producer."""
        n = len(self.waiters)
        self.waiters.clear()
        return n
