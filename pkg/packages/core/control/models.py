"""
Control Plane Models

Startup reports, the calibrated cluster cost model, leader records,
coordination stores and submission requests.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from ..runtime.engine import NS_PER_MS

if TYPE_CHECKING:
    from ..config import ClusterConfig

logger = logging.getLogger(__name__)

# Standard normal quantile at 0.99
Z_99 = 2.3263478740408408


# ============================================================================
# Startup
# ============================================================================

@dataclass
class StartupReport:
    """Phase timings of one job (re)start. Phases are serialized."""
    parse_ns: int = 0
    allocate_ns: int = 0
    deploy_ns: int = 0
    rpc_count: int = 0
    redundant_tms_used: int = 0
    released_tms: int = 0
    tasks: int = 0
    tms: int = 0
    descriptors: int = 0
    path: str = "cold"

    @property
    def total_ns(self) -> int:
        return self.parse_ns + self.allocate_ns + self.deploy_ns

    def to_dict(self) -> dict:
        result = asdict(self)
        result["total_ns"] = self.total_ns
        return result


@dataclass
class ClusterModel:
    """
    Cost model of the control plane.

    parse   = parse_base + parse_per_task * T + parse_per_descriptor * D
    request i (1-based) becomes launchable at provision_c_ms * i ** provision_alpha,
    then registers after a lognormal startup draw (p50/p99 in ms)
    deploy  = T * (a + b) unbatched, a * M + b * T batched
    """
    parse_base_ns: int = 51 * NS_PER_MS
    parse_per_task_ns: int = 258_000
    parse_per_descriptor_ns: int = 2_000
    provision_c_ms: float = 0.0
    provision_alpha: float = 0.55
    startup_p50_ms: float = 800.0
    startup_p99_ms: float = 5000.0
    startup_dist: str = "lognormal"
    a_ns: int = 200_000
    b_ns: int = 5_000
    slots_per_tm: int = 4
    capacity_tms: int = 64
    spares: int = 8

    @classmethod
    def large_cluster(cls) -> "ClusterModel":
        """Preset calibrated against large-cluster Q2 startup timings (unbatched deploy)."""
        return cls(
            provision_c_ms=7600.0,
            provision_alpha=0.55,
            a_ns=9 * NS_PER_MS,
            b_ns=220_000,
            slots_per_tm=2,
            capacity_tms=4096,
            spares=5,
        )

    @classmethod
    def from_config(cls, config: "ClusterConfig") -> "ClusterModel":
        return cls(
            startup_p50_ms=config.tm_startup_ms.p50,
            startup_p99_ms=config.tm_startup_ms.p99,
            startup_dist=config.tm_startup_ms.dist,
            a_ns=config.rpc.a_ns,
            b_ns=config.rpc.b_ns,
            slots_per_tm=config.slots_per_tm,
            capacity_tms=config.tms,
            spares=config.spares,
        )

    def parse_ns(self, tasks: int, descriptors: int) -> int:
        return (self.parse_base_ns + self.parse_per_task_ns * tasks
                + self.parse_per_descriptor_ns * descriptors)

    def provision_delay_ns(self, index: int) -> int:
        """Launch time of the index-th (1-based) TM request under provisioning contention."""
        if self.provision_c_ms <= 0 or index <= 0:
            return 0
        return int(self.provision_c_ms * index ** self.provision_alpha * NS_PER_MS)

    def deploy_ns(self, tasks: int, tms: int, batched: bool) -> tuple[int, int]:
        """Deploy time and RPC count for T tasks spread over M TMs."""
        if batched:
            return self.a_ns * tms + self.b_ns * tasks, tms
        return tasks * (self.a_ns + self.b_ns), tasks

    def startup_sampler(self, rng: np.random.Generator) -> Callable[[], int]:
        """Seeded sampler of TM startup latency in ns."""
        p50 = self.startup_p50_ms
        p99 = self.startup_p99_ms
        if self.startup_dist == "fixed" or p50 <= 0 or p99 <= p50:
            fixed = int(p50 * NS_PER_MS)
            return lambda: fixed
        mu = math.log(p50)
        sigma = (math.log(p99) - mu) / Z_99
        return lambda: int(rng.lognormal(mu, sigma) * NS_PER_MS)


# ============================================================================
# Leader Metadata
# ============================================================================

class CoordinationRole(str, Enum):
    PRIMARY = "primary"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class LeaderRecord:
    leader_id: str
    term: int
    written_at_ns: int = 0


class CoordinationUnavailable(Exception):
    def __init__(self, role: CoordinationRole):
        super().__init__(f"{role.value} coordination store unavailable")
        self.role = role


@dataclass
class CoordinationStore:
    """Sequential leader-record store; reads reflect the last completed write."""
    role: CoordinationRole
    available: bool = True
    record: Optional[LeaderRecord] = None
    read_ns: int = NS_PER_MS
    write_ns: int = 2 * NS_PER_MS
    writes: int = 0

    def read(self) -> Optional[LeaderRecord]:
        if not self.available:
            raise CoordinationUnavailable(self.role)
        return self.record

    def write(self, record: LeaderRecord) -> None:
        if not self.available:
            raise CoordinationUnavailable(self.role)
        if self.record is not None and record.term < self.record.term:
            raise ValueError(f"term regression {self.record.term} -> {record.term} "
                             f"on {self.role.value} store")
        self.record = record
        self.writes += 1


# ============================================================================
# Submission
# ============================================================================

@dataclass
class SubmissionRequest:
    job_id: str
    idempotency_key: str
    attempts: int = 0


@dataclass
class Accepted:
    job_id: str
    attempts: int
    existing: bool = False
    delays_ns: list[int] = field(default_factory=list)


@dataclass
class Rejected:
    reason: str
    attempts: int
    delays_ns: list[int] = field(default_factory=list)
