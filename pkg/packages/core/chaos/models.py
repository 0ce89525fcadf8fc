"""
Fault Plan Models

Pydantic schema of scripted faults. Times and durations accept plain
seconds or suffixed strings ("500ms", "900s", "15m", "1h").
"""
from __future__ import annotations

import re
from enum import Enum
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from ..runtime.engine import NS_PER_MS, NS_PER_S

_DURATION = re.compile(r"^\s*(-?\d+(?:\.\d+)?)\s*(ns|us|ms|s|m|h)?\s*$")
_UNITS = {
    "ns": 1,
    "us": 1_000,
    "ms": NS_PER_MS,
    "s": NS_PER_S,
    "m": 60 * NS_PER_S,
    "h": 3600 * NS_PER_S,
}


class PlanError(Exception):
    """Invalid fault plan, with the location of the offending entry."""

    def __init__(self, message: str, location: Optional[str] = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


def parse_duration_ns(value: Union[int, float, str]) -> int:
    """Seconds (number) or suffixed string -> ns."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a duration")
    if isinstance(value, (int, float)):
        return int(round(value * NS_PER_S))
    match = _DURATION.match(str(value))
    if not match:
        raise ValueError(f"cannot parse duration {value!r}")
    number, unit = match.groups()
    return int(round(float(number) * _UNITS[unit or "s"]))


class FaultKind(str, Enum):
    KILL_TM = "KillTM"
    KILL_TASK = "KillTask"
    KILL_JM = "KillJM"
    SLOW_STORE = "SlowStore"
    NET_DELAY = "NetDelay"
    CPU_SLOW = "CpuSlow"
    STORE_DOWN = "StoreDown"


Selector = Union[str, dict[str, Any], None]


class FaultSpec(BaseModel):
    """One scheduled fault."""
    at: int = Field(description="injection time, ns")
    kind: FaultKind
    target: Selector = None
    duration: int = 0
    p_slow: float = Field(default=0.0, ge=0, le=1)
    delay: int = 0
    added: int = 0
    capacity: Optional[int] = Field(default=None, ge=1)
    factor: float = Field(default=1.0, gt=0)
    store: Literal["snapshot", "primary", "fallback"] = "snapshot"

    @field_validator("at", "duration", "delay", "added", mode="before")
    @classmethod
    def _parse_time(cls, value: Any) -> int:
        return parse_duration_ns(value)

    @field_validator("at", "duration", "delay", "added")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("target")
    @classmethod
    def _check_selector(cls, value: Selector) -> Selector:
        if isinstance(value, dict):
            allowed = {"hosts", "subtask", "task", "edge", "from", "to"}
            unknown = set(value) - allowed
            if unknown:
                raise ValueError(f"unknown selector keys {sorted(unknown)}")
            if "subtask" in value and not isinstance(value["subtask"], int):
                raise ValueError("subtask selector needs an integer index")
        return value

    @model_validator(mode="after")
    def _check_kind(self) -> "FaultSpec":
        if self.kind in (FaultKind.KILL_TM, FaultKind.KILL_TASK, FaultKind.CPU_SLOW) \
                and self.target is None:
            raise ValueError(f"{self.kind.value} needs a target")
        return self

    @property
    def expires_at(self) -> Optional[int]:
        return self.at + self.duration if self.duration else None


class FaultPlan(BaseModel):
    seed: int = 0
    faults: list[FaultSpec] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.faults)
