"""
Scaling Safety Policies

Cooldown, no-downscale freeze windows, hourly rate limit, step bound,
probation with automatic rollback, and a circuit breaker over consecutive
failed adjustments.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

from ..runtime.engine import NS_PER_S
from .signals import ScalingDecision

if TYPE_CHECKING:
    from ..config import AutoscaleConfig

logger = logging.getLogger(__name__)

NS_PER_MIN = 60 * NS_PER_S
NS_PER_HOUR = 60 * NS_PER_MIN
MINUTES_PER_DAY = 24 * 60


class ApplyKind(str, Enum):
    APPLIED = "Applied"
    DEFERRED = "Deferred"
    ROLLED_BACK = "RolledBack"
    BREAKER_OPEN = "BreakerOpen"


@dataclass
class ApplyOutcome:
    kind: ApplyKind
    reason: str = ""
    parallelism: dict[str, int] = field(default_factory=dict)

    def __str__(self) -> str:
        return f"{self.kind.value}({self.reason})" if self.reason else self.kind.value


def parse_clock(value: str) -> int:
    """'HH:MM' -> minutes after midnight."""
    try:
        hours, minutes = value.split(":")
        h, m = int(hours), int(minutes)
    except ValueError as e:
        raise ValueError(f"expected HH:MM, got {value!r}") from e
    if not (0 <= h < 24 and 0 <= m < 60):
        raise ValueError(f"clock time out of range: {value!r}")
    return h * 60 + m


@dataclass
class SafetyPolicy:
    cooldown_ns: int = 300 * NS_PER_S
    freeze: list[tuple[int, int]] = field(default_factory=list)  # minutes of day, [start, end)
    clock_start_min: int = 0
    max_step: float = 2.0
    clamp_steps: bool = False
    probation_ns: int = 20 * NS_PER_S
    rho: float = 0.8
    breaker_k: int = 3
    breaker_reset_ns: int = NS_PER_HOUR
    max_changes_per_hour: int = 6
    min_p: int = 1
    max_p: int = 256

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.breaker_k < 1:
            raise ValueError(f"breaker_k must be >= 1, got {self.breaker_k}")

    @classmethod
    def from_config(cls, config: "AutoscaleConfig") -> "SafetyPolicy":
        return cls(
            cooldown_ns=int(config.cooldown_s * NS_PER_S),
            freeze=[(parse_clock(a), parse_clock(b)) for a, b in config.freeze],
            clock_start_min=parse_clock(config.clock_start),
            max_step=config.max_step,
            clamp_steps=config.clamp_steps,
            probation_ns=int(config.probation_intervals * config.interval_s * NS_PER_S),
            rho=config.rho,
            breaker_k=config.breaker_k,
            breaker_reset_ns=int(config.breaker_reset_s * NS_PER_S),
            max_changes_per_hour=config.max_changes_per_hour,
            min_p=config.min_p,
            max_p=config.max_p,
        )

    def minute_of_day(self, now_ns: int) -> int:
        return (self.clock_start_min + now_ns // NS_PER_MIN) % MINUTES_PER_DAY

    def in_freeze(self, now_ns: int) -> bool:
        minute = self.minute_of_day(now_ns)
        for start, end in self.freeze:
            if start <= end:
                if start <= minute < end:
                    return True
            elif minute >= start or minute < end:
                return True
        return False


@dataclass
class Probation:
    prior: dict[str, int]
    pre_throughput: float
    until_ns: int


@dataclass
class PolicyState:
    parallelism: dict[str, int]
    last_change_ns: Optional[int] = None
    change_times: list[int] = field(default_factory=list)
    probation: Optional[Probation] = None
    consecutive_failures: int = 0
    breaker_open_since: Optional[int] = None
    history: list[tuple[int, str]] = field(default_factory=list)

    @property
    def breaker_open(self) -> bool:
        return self.breaker_open_since is not None


def record_failure(state: PolicyState, policy: SafetyPolicy, now_ns: int) -> None:
    """A failed adjustment (rollback or rescale restart failure)."""
    state.consecutive_failures += 1
    if state.consecutive_failures >= policy.breaker_k and state.breaker_open_since is None:
        state.breaker_open_since = now_ns
        logger.warning(f"Scaling breaker open after {state.consecutive_failures} failures")


def reset_breaker(state: PolicyState) -> None:
    state.breaker_open_since = None
    state.consecutive_failures = 0


def _clamp_step(old: int, new: int, max_step: float) -> int:
    if new > old:
        return min(new, math.floor(old * max_step))
    return max(new, math.ceil(old / max_step))


def _exceeds_step(old: int, new: int, max_step: float) -> bool:
    return new > old * max_step or old > new * max_step


def _apply(state: PolicyState, policy: SafetyPolicy, targets: dict[str, int], now_ns: int,
           throughput: float) -> ApplyOutcome:
    prior = dict(state.parallelism)
    state.parallelism = dict(targets)
    state.last_change_ns = now_ns
    state.change_times.append(now_ns)
    state.probation = Probation(prior, throughput, now_ns + policy.probation_ns)
    return ApplyOutcome(ApplyKind.APPLIED, "", dict(targets))


def guard_and_apply(decision: ScalingDecision, policy: SafetyPolicy, state: PolicyState,
                    now_ns: int, throughput: float) -> ApplyOutcome:
    """
    Run a decision through the safety policies and update `state`.

    Checks in order: breaker, probation verdict, no-op, cooldown, freeze
    (downscales only), hourly rate limit, step bound.
    """
    outcome = _guard(decision, policy, state, now_ns, throughput)
    state.history.append((now_ns, str(outcome)))
    if outcome.kind != ApplyKind.DEFERRED:
        logger.info(f"Scaling at {now_ns / NS_PER_S:.0f} s: {outcome} -> {state.parallelism}")
    return outcome


def _guard(decision: ScalingDecision, policy: SafetyPolicy, state: PolicyState,
           now_ns: int, throughput: float) -> ApplyOutcome:
    if state.breaker_open_since is not None:
        if now_ns - state.breaker_open_since < policy.breaker_reset_ns:
            return ApplyOutcome(ApplyKind.BREAKER_OPEN, "", dict(state.parallelism))
        reset_breaker(state)

    probation = state.probation
    if probation is not None:
        if now_ns < probation.until_ns:
            return ApplyOutcome(ApplyKind.DEFERRED, "probation", dict(state.parallelism))
        state.probation = None
        if throughput < policy.rho * probation.pre_throughput:
            state.parallelism = dict(probation.prior)
            state.last_change_ns = now_ns
            state.change_times.append(now_ns)
            record_failure(state, policy, now_ns)
            return ApplyOutcome(ApplyKind.ROLLED_BACK, "degraded", dict(state.parallelism))
        state.consecutive_failures = 0

    current = state.parallelism
    targets = {op: decision.targets.get(op, p) for op, p in current.items()}
    if targets == current:
        return ApplyOutcome(ApplyKind.DEFERRED, "no_change", dict(current))

    if state.last_change_ns is not None and now_ns - state.last_change_ns < policy.cooldown_ns:
        return ApplyOutcome(ApplyKind.DEFERRED, "cooldown", dict(current))

    if policy.in_freeze(now_ns):
        targets = {op: max(p, current[op]) for op, p in targets.items()}
        if targets == current:
            return ApplyOutcome(ApplyKind.DEFERRED, "freeze", dict(current))

    recent = [t for t in state.change_times if now_ns - t < NS_PER_HOUR]
    state.change_times = recent
    if len(recent) >= policy.max_changes_per_hour:
        return ApplyOutcome(ApplyKind.DEFERRED, "rate_limit", dict(current))

    if any(_exceeds_step(current[op], p, policy.max_step) for op, p in targets.items()):
        if not policy.clamp_steps:
            return ApplyOutcome(ApplyKind.DEFERRED, "max_step", dict(current))
        targets = {op: _clamp_step(current[op], p, policy.max_step) for op, p in targets.items()}

    targets = {op: min(policy.max_p, max(policy.min_p, p)) for op, p in targets.items()}
    if targets == current:
        return ApplyOutcome(ApplyKind.DEFERRED, "no_change", dict(current))
    return _apply(state, policy, targets, now_ns, throughput)
