"""
Discrete-Event Engine

A virtual-nanosecond clock and event heap on top of simpy. Events fire in
(time, scheduling sequence) order; the engine is single-threaded by contract.
"""
from __future__ import annotations

import logging
from functools import lru_cache, partial
from typing import Any, Callable, Optional

import simpy

from ..seeding import MASK64, stable_hash

logger = logging.getLogger(__name__)

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def seconds(value: float) -> int:
    return int(round(value * NS_PER_S))


def millis(value: float) -> int:
    return int(round(value * NS_PER_MS))


class EngineError(Exception):
    """Fatal engine condition such as event-queue overflow."""

    def __init__(self, message: str, now_ns: Optional[int] = None, pending: Optional[int] = None):
        super().__init__(message)
        self.now_ns = now_ns
        self.pending = pending


@lru_cache(maxsize=None)
def _name_hash(name: str) -> int:
    return stable_hash(name)


def action_id(action: Callable[..., Any]) -> int:
    """Stable identifier of a scheduled callable: the hash of its qualified name."""
    target = action.func if isinstance(action, partial) else action
    name = getattr(target, "__qualname__", None) or type(target).__qualname__
    return _name_hash(name)


class Engine:
    """
    Deterministic event scheduler.

    simpy orders same-time events by insertion id, which gives the global
    sequence-number tie-break. Each fired event (time, sequence and the action's
    qualified name) is folded into ``digest`` so two runs can be compared cheaply.
    """

    def __init__(self, max_pending: int = 2_000_000):
        self.env = simpy.Environment()
        self.max_pending = max_pending
        self.pending = 0
        self.processed = 0
        self.digest = 0

    @property
    def now(self) -> int:
        return int(self.env.now)

    def schedule(self, delay_ns: int, action: Callable[..., Any], *args: Any) -> None:
        if delay_ns < 0:
            raise EngineError(f"negative delay {delay_ns}", now_ns=self.now)
        if self.pending >= self.max_pending:
            raise EngineError(f"event queue overflow beyond {self.max_pending} pending events",
                              now_ns=self.now, pending=self.pending)
        self.pending += 1
        event = self.env.timeout(int(delay_ns))
        event.callbacks.append(partial(self._fire, action, args))

    def at(self, time_ns: int, action: Callable[..., Any], *args: Any) -> None:
        self.schedule(max(0, int(time_ns) - self.now), action, *args)

    def _fire(self, action: Callable[..., Any], args: tuple, _event: Any) -> None:
        self.pending -= 1
        self.processed += 1
        step = self.digest * 1_000_003 + self.now + self.processed
        self.digest = (step ^ action_id(action)) & MASK64
        action(*args)

    def run_until(self, t_end_ns: int) -> int:
        """Process every event with time <= t_end_ns; returns the number fired."""
        start = self.processed
        env = self.env
        while env.peek() <= t_end_ns:
            env.step()
        if t_end_ns > env.now:
            env.run(until=t_end_ns)
        fired = self.processed - start
        logger.debug(f"run_until({t_end_ns}) fired {fired} events")
        return fired
