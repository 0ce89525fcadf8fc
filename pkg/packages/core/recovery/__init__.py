"""
Recovery

Failure planning and execution for FullRestart, RegionFailover and
SingleTask, active-standby promotion and JobManager failover.
"""
from .executor import RecoveryManager
from .models import (
    FailureEvent,
    FailureScope,
    PolicyError,
    RecoveryPlan,
    RecoveryReport,
    RecoveryStrategy,
    SwitchReport,
)
from .planner import plan_recovery
from .replication import assign_standbys, promote_standby, standby_alive

__all__ = [
    "FailureEvent",
    "FailureScope",
    "PolicyError",
    "RecoveryManager",
    "RecoveryPlan",
    "RecoveryReport",
    "RecoveryStrategy",
    "SwitchReport",
    "assign_standbys",
    "plan_recovery",
    "promote_standby",
    "standby_alive",
]
