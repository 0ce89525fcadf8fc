"""
Micro-benchmarks

Host wall-clock measurements of the hot components: keyed state access,
routing decisions per strategy and the engine event loop. Numbers are for
regression tracking only; nothing here is asserted against a threshold.
"""
from __future__ import annotations

import logging
import time
from typing import Callable, Iterable, Optional

import numpy as np

from ..checkpoint.lazy import KeyedStateStore
from ..runtime.engine import Engine
from ..shuffle.router import Partitioner
from ..shuffle.strategies import ShuffleStrategy
from .models import MicrobenchReport, MicrobenchRow

logger = logging.getLogger(__name__)

COMPONENTS = ("state_store", "routing", "scheduler")
REPETITIONS = 5
KEY_SPACES = (1_000, 10_000, 100_000, 1_000_000)
ROUTING_STRATEGIES = ("rebalance", "keyhash", "backlog_aware", "weakhash", "group_rescale")


def _stats(samples: list[float]) -> tuple[float, float, float]:
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean())
    stdev = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return mean, stdev, stdev / mean if mean else 0.0


def _row(component: str, case: str, unit: str, samples: list[float]) -> MicrobenchRow:
    mean, stdev, cv = _stats(samples)
    return MicrobenchRow(component=component, case=case, unit=unit, samples=samples,
                         mean=mean, stdev=stdev, cv=cv)


def _timed(fn: Callable[[], int]) -> float:
    """Operations per second of one call of `fn`, which returns its operation count."""
    start = time.perf_counter()
    ops = fn()
    elapsed = time.perf_counter() - start
    return ops / elapsed if elapsed > 0 else float("inf")


# ============================================================================
# Components
# ============================================================================

def bench_state_store(repetitions: int, key_spaces: Iterable[int] = KEY_SPACES,
                      ops: int = 200_000) -> list[MicrobenchRow]:
    rows = []
    for space in key_spaces:
        keys = np.random.default_rng(space).integers(0, space, size=ops).tolist()

        def put_get() -> int:
            store = KeyedStateStore()
            for k in range(space):
                store.put((0, k), 0)
            for k in keys:
                store.incr((0, k))
                store.get((0, k))
            return 2 * ops

        samples = [_timed(put_get) for _ in range(repetitions)]
        rows.append(_row("state_store", f"keys={space}", "ops/s", samples))
    return rows


def bench_routing(repetitions: int, decisions: int = 200_000,
                  down: int = 32) -> list[MicrobenchRow]:
    rows = []
    keys = np.random.default_rng(7).integers(0, 1 << 30, size=decisions).tolist()
    backlogs = [i % 20 for i in range(down)]
    loads = [((i * 37) % 100) / 100 for i in range(down)]
    for name in ROUTING_STRATEGIES:
        params = {"groups": 4} if name == "group_rescale" else None
        strategy = ShuffleStrategy.parse(name, params)

        def route() -> int:
            partitioner = Partitioner(strategy, producer=0, up=4 if params else 1, down=down)
            for key in keys:
                partitioner.select(key, backlogs, loads)
            return decisions

        samples = [_timed(route) for _ in range(repetitions)]
        rows.append(_row("routing", name, "decisions/s", samples))
    return rows


def bench_scheduler(repetitions: int, events: int = 200_000) -> list[MicrobenchRow]:
    def noop() -> None:
        pass

    def loop() -> int:
        engine = Engine(max_pending=events + 1)
        for i in range(events):
            engine.schedule(i % 1000, noop)
        engine.run_until(1000)
        return events

    samples = [_timed(loop) for _ in range(repetitions)]
    return [_row("scheduler", "schedule+fire", "events/s", samples)]


def run_microbench(components: Optional[Iterable[str]] = None,
                   repetitions: int = REPETITIONS,
                   key_spaces: Iterable[int] = KEY_SPACES) -> MicrobenchReport:
    """Measure the selected components; unknown names raise ValueError."""
    selected = list(components) if components else list(COMPONENTS)
    unknown = set(selected) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown microbench components {sorted(unknown)}")
    rows: list[MicrobenchRow] = []
    for component in selected:
        logger.info(f"Microbench {component} ({repetitions} repetitions)")
        if component == "state_store":
            rows.extend(bench_state_store(repetitions, key_spaces))
        elif component == "routing":
            rows.extend(bench_routing(repetitions))
        else:
            rows.extend(bench_scheduler(repetitions))
    return MicrobenchReport(components=selected, repetitions=repetitions, rows=rows)
