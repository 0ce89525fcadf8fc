"""
Shuffle Strategies

Strategy definitions, their parameters, and the static connectivity each one
implies between an upstream and a downstream operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from ..config import ConfigError

DEFAULT_THRESHOLD = 16
EWMA_ALPHA = 0.2


class StrategyKind(str, Enum):
    FORWARD = "forward"
    KEYHASH = "keyhash"
    REBALANCE = "rebalance"
    RESCALE = "rescale"
    GROUP_RESCALE = "group_rescale"
    BACKLOG_AWARE = "backlog_aware"
    WEAKHASH = "weakhash"


class Dispatch(str, Enum):
    LEAST_LOADED = "least_loaded"
    ROUND_ROBIN = "round_robin"


# Accepted spellings in job files and CLI grids
_ALIASES = {
    "forward": StrategyKind.FORWARD,
    "keyhash": StrategyKind.KEYHASH,
    "key_hash": StrategyKind.KEYHASH,
    "hash": StrategyKind.KEYHASH,
    "rebalance": StrategyKind.REBALANCE,
    "round_robin": StrategyKind.REBALANCE,
    "rescale": StrategyKind.RESCALE,
    "group_rescale": StrategyKind.GROUP_RESCALE,
    "grouprescale": StrategyKind.GROUP_RESCALE,
    "backlog_aware": StrategyKind.BACKLOG_AWARE,
    "backlog": StrategyKind.BACKLOG_AWARE,
    "backlogaware": StrategyKind.BACKLOG_AWARE,
    "weakhash": StrategyKind.WEAKHASH,
    "weak_hash": StrategyKind.WEAKHASH,
}

ALL_TO_ALL = frozenset({
    StrategyKind.KEYHASH,
    StrategyKind.REBALANCE,
    StrategyKind.BACKLOG_AWARE,
    StrategyKind.WEAKHASH,
})


@dataclass(frozen=True)
class ShuffleStrategy:
    """A partitioning strategy with its per-edge parameters."""
    kind: StrategyKind
    groups: int = 1
    threshold: int = DEFAULT_THRESHOLD
    k: int = 2
    dispatch: Dispatch = Dispatch.LEAST_LOADED

    @classmethod
    def parse(cls, name: str, params: Optional[dict[str, Any]] = None) -> "ShuffleStrategy":
        params = params or {}
        kind = _ALIASES.get(str(name).strip().lower())
        if kind is None:
            raise ConfigError(f"unknown shuffle strategy {name!r}", location="strategy")
        kwargs: dict[str, Any] = {}
        if kind == StrategyKind.GROUP_RESCALE:
            kwargs["groups"] = int(params.get("groups", 1))
        elif kind == StrategyKind.BACKLOG_AWARE:
            kwargs["threshold"] = int(params.get("threshold", DEFAULT_THRESHOLD))
        elif kind == StrategyKind.WEAKHASH:
            kwargs["k"] = int(params.get("k", 2))
            try:
                kwargs["dispatch"] = Dispatch(str(params.get("dispatch", "least_loaded")))
            except ValueError as e:
                raise ConfigError(f"unknown dispatch {params.get('dispatch')!r}",
                                  location="params.dispatch") from e
        strategy = cls(kind=kind, **kwargs)
        if strategy.groups < 1:
            raise ConfigError("groups must be >= 1", location="params.groups")
        if strategy.k < 1:
            raise ConfigError("k must be >= 1", location="params.k")
        return strategy

    @property
    def is_all_to_all(self) -> bool:
        return self.kind in ALL_TO_ALL

    @property
    def is_pointwise(self) -> bool:
        return self.kind in (StrategyKind.FORWARD, StrategyKind.RESCALE)

    @property
    def repartitions(self) -> bool:
        """True when downstream parallelism may change freely."""
        return self.kind in ALL_TO_ALL

    def validate(self, up: int, down: int, capacity: int = 32) -> None:
        if self.kind == StrategyKind.FORWARD and up != down:
            raise ConfigError(f"forward edge needs equal parallelism, got {up} -> {down}",
                              location="strategy")
        if self.kind == StrategyKind.GROUP_RESCALE and self.groups > min(up, down):
            raise ConfigError(f"groups={self.groups} exceeds min parallelism {min(up, down)}",
                              location="params.groups")
        if self.kind == StrategyKind.BACKLOG_AWARE and not 0 < self.threshold <= capacity:
            raise ConfigError(f"threshold {self.threshold} outside (0, {capacity}]",
                              location="params.threshold")
        if self.kind == StrategyKind.WEAKHASH and not 1 <= self.k <= down:
            raise ConfigError(f"k={self.k} outside [1, {down}]", location="params.k")

    def scheme(self, down: int) -> tuple:
        """Partition scheme shared by every channel of an edge with this strategy."""
        if self.kind == StrategyKind.GROUP_RESCALE:
            return (self.kind.value, down, self.groups)
        if self.kind == StrategyKind.BACKLOG_AWARE:
            return (self.kind.value, down, self.threshold)
        if self.kind == StrategyKind.WEAKHASH:
            return (self.kind.value, down, self.k, self.dispatch.value)
        if self.is_pointwise:
            return (self.kind.value,)
        return (self.kind.value, down)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"strategy": self.kind.value}
        if self.kind == StrategyKind.GROUP_RESCALE:
            data["params"] = {"groups": self.groups}
        elif self.kind == StrategyKind.BACKLOG_AWARE:
            data["params"] = {"threshold": self.threshold}
        elif self.kind == StrategyKind.WEAKHASH:
            data["params"] = {"k": self.k, "dispatch": self.dispatch.value}
        return data


@dataclass
class RouteContext:
    """Producer-side routing state; counters live in the producing task."""
    producer: int
    up: int
    down: int
    backlog: list[int] = field(default_factory=list)
    load: list[float] = field(default_factory=list)
    counter: int = 0
    key_counters: dict[int, int] = field(default_factory=dict)
    seed: int = 0


# ============================================================================
# Static Connectivity
# ============================================================================

def rescale_range(producer: int, up: int, down: int) -> range:
    """Contiguous downstream range of a rescale producer."""
    start = producer * down // up
    end = max(start + 1, (producer + 1) * down // up)
    return range(start, end)


def group_of(index: int, n: int, groups: int) -> int:
    """Group of an index when n indices form `groups` contiguous groups (remainder to last)."""
    size = max(1, n // groups)
    return min(index // size, groups - 1)


def group_members(group: int, n: int, groups: int) -> list[int]:
    return [j for j in range(n) if group_of(j, n, groups) == group]


def connected_consumers(strategy: ShuffleStrategy, producer: int, up: int, down: int) -> list[int]:
    """Downstream subtask indices reachable from one producer."""
    if strategy.kind == StrategyKind.FORWARD:
        return [producer]
    if strategy.kind == StrategyKind.RESCALE:
        return list(rescale_range(producer, up, down))
    if strategy.kind == StrategyKind.GROUP_RESCALE:
        return group_members(group_of(producer, up, strategy.groups), down, strategy.groups)
    return list(range(down))
