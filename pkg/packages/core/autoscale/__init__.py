"""
Autoscaling

Parallelism controller with metric smoothing, saturated-signal substitution
and production safety policies.
"""
from .controller import AutoscaleController, ControlRound, FluidJob
from .policy import (
    ApplyKind,
    ApplyOutcome,
    PolicyState,
    Probation,
    SafetyPolicy,
    guard_and_apply,
    parse_clock,
    record_failure,
    reset_breaker,
)
from .signals import (
    MetricWindow,
    OperatorSample,
    ScalingDecision,
    Signals,
    smooth,
    target_parallelism,
)

__all__ = [
    "ApplyKind",
    "ApplyOutcome",
    "AutoscaleController",
    "ControlRound",
    "FluidJob",
    "MetricWindow",
    "OperatorSample",
    "PolicyState",
    "Probation",
    "SafetyPolicy",
    "ScalingDecision",
    "Signals",
    "guard_and_apply",
    "parse_clock",
    "record_failure",
    "reset_breaker",
    "smooth",
    "target_parallelism",
]
