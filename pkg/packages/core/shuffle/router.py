"""
Record Routing

Channel selection for static and adaptive strategies, plus the per-producer
Partitioner that owns the routing counters.
"""
from __future__ import annotations

from typing import Optional, Sequence

from ..seeding import stable_hash
from .strategies import (
    EWMA_ALPHA,
    Dispatch,
    RouteContext,
    ShuffleStrategy,
    StrategyKind,
    group_members,
    group_of,
    rescale_range,
)


def keyhash_index(key: int, n: int, seed: int = 0) -> int:
    return stable_hash(key, seed) % n


def route_static(strategy: ShuffleStrategy, ctx: RouteContext, key: Optional[int] = None) -> int:
    """
    Select a downstream subtask for a static strategy.

    Counter-based strategies read ``ctx.counter``; the caller advances it.
    """
    kind = strategy.kind
    if (kind == StrategyKind.KEYHASH) != (key is not None):
        raise ValueError("a key is required for keyhash routing and only for it")
    if kind == StrategyKind.REBALANCE:
        return ctx.counter % ctx.down
    if kind == StrategyKind.KEYHASH:
        return keyhash_index(key, ctx.down, ctx.seed)
    if kind == StrategyKind.FORWARD:
        strategy.validate(ctx.up, ctx.down)
        return ctx.producer
    if kind == StrategyKind.RESCALE:
        span = rescale_range(ctx.producer, ctx.up, ctx.down)
        return span[ctx.counter % len(span)]
    if kind == StrategyKind.GROUP_RESCALE:
        members = group_members(group_of(ctx.producer, ctx.up, strategy.groups), ctx.down,
                                strategy.groups)
        return members[ctx.counter % len(members)]
    raise ValueError(f"{kind.value} is not a static strategy")


def route_backlog_aware(ctx: RouteContext, threshold: int) -> int:
    """
    Round-robin that skips candidates whose backlog reached the threshold.

    Under total congestion the minimum-backlog candidate is chosen (ties to
    the lowest index).
    """
    n = len(ctx.backlog)
    if n == 0:
        raise ValueError("candidate set is empty")
    for step in range(n):
        candidate = (ctx.counter + step) % n
        if ctx.backlog[candidate] < threshold:
            return candidate
    return min(range(n), key=lambda i: (ctx.backlog[i], i))


def weakhash_candidates(key: int, n: int, k: int, seed: int = 0) -> list[int]:
    """
    Bounded candidate set for a key: k distinct tasks from salted hashes.

    The first candidate is the key-hash target, so k=1 degenerates to keyhash.
    """
    if k >= n:
        return list(range(n))
    candidates = [keyhash_index(key, n, seed)]
    salt = 1
    while len(candidates) < k:
        c = stable_hash(key, seed, salt) % n
        if c not in candidates:
            candidates.append(c)
        salt += 1
    return sorted(candidates)


def route_weakhash(key: int, ctx: RouteContext, k: int, dispatch: Dispatch) -> int:
    candidates = weakhash_candidates(key, ctx.down, k, ctx.seed)
    if dispatch == Dispatch.LEAST_LOADED:
        return min(candidates, key=lambda c: (ctx.load[c], c))
    turn = ctx.key_counters.get(key, 0)
    ctx.key_counters[key] = turn + 1
    return candidates[turn % len(candidates)]


class Partitioner:
    """Routing state of one producer subtask on one outgoing edge."""

    def __init__(self, strategy: ShuffleStrategy, producer: int, up: int, down: int, seed: int = 0):
        self.strategy = strategy
        self.ctx = RouteContext(producer=producer, up=up, down=down, seed=seed,
                                backlog=[0] * down, load=[0.0] * down)

    def select(
        self,
        key: int,
        backlogs: Optional[Sequence[int]] = None,
        loads: Optional[Sequence[float]] = None,
    ) -> int:
        strategy = self.strategy
        ctx = self.ctx
        kind = strategy.kind
        if kind == StrategyKind.BACKLOG_AWARE:
            ctx.backlog = list(backlogs) if backlogs is not None else ctx.backlog
            choice = route_backlog_aware(ctx, strategy.threshold)
            ctx.counter = choice + 1
            return choice
        if kind == StrategyKind.WEAKHASH:
            if loads is not None:
                ctx.load = list(loads)
            return route_weakhash(key, ctx, strategy.k, strategy.dispatch)
        if kind == StrategyKind.KEYHASH:
            return route_static(strategy, ctx, key)
        choice = route_static(strategy, ctx)
        ctx.counter += 1
        return choice

    def reset(self) -> None:
        self.ctx.counter = 0
        self.ctx.key_counters.clear()


def ewma(previous: float, sample: float, alpha: float = EWMA_ALPHA) -> float:
    return alpha * sample + (1 - alpha) * previous
