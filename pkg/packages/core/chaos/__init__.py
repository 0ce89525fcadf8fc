"""
Chaos

Scripted fault plans: load, validate and arm faults against TaskManagers,
the JobManager, the snapshot store, channels and CPU speed.
"""
from .injector import ChaosTarget, FaultOverlays, arm, resolve_channels, resolve_task, resolve_tm
from .models import FaultKind, FaultPlan, FaultSpec, PlanError, parse_duration_ns
from .plan import load_plan, random_plan

__all__ = [
    "ChaosTarget",
    "FaultKind",
    "FaultOverlays",
    "FaultPlan",
    "FaultSpec",
    "PlanError",
    "arm",
    "load_plan",
    "parse_duration_ns",
    "random_plan",
    "resolve_channels",
    "resolve_task",
    "resolve_tm",
]
