"""
Pydantic Models for Run Reports

Metrics report, SLO target and verdict, and the micro-benchmark report.
"""
from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from ..config import SloConfig
from ..runtime.engine import NS_PER_MS, NS_PER_S


# ============================================================================
# Metrics Report
# ============================================================================

class LatencySummary(BaseModel):
    """End-to-end latency (sink consumption - source emission), ms."""
    samples: int = 0
    p50_ms: Optional[float] = None
    p99_ms: Optional[float] = None
    p99_outside_recovery_ms: Optional[float] = None
    samples_outside_recovery: int = 0


class CheckpointSummary(BaseModel):
    """Checkpoint attempt outcomes over the run."""
    enabled: bool = True
    mode: str = "global"
    attempts: int = 0
    skipped: int = 0
    succeeded: int = 0
    partial: int = 0
    failed: int = 0
    success_rate: float = 0.0
    region_success_rate: float = 0.0
    merge_errors: int = 0


class RecoveryEvent(BaseModel):
    """One completed recovery."""
    time_s: float
    scope: str
    strategy: str
    tasks: int
    recovery_time_s: float
    dropped: int = 0
    replayed: int = 0
    moved: int = 0
    rpc_count: int = 0


class StartupSummary(BaseModel):
    parse_ms: float
    allocate_ms: float
    deploy_ms: float
    total_ms: float
    rpc_count: int
    tasks: int
    tms: int
    descriptors: int


class AutoscaleSummary(BaseModel):
    """Control-loop outcome counts and the final parallelism vector."""
    rounds: int = 0
    applied: int = 0
    deferred: int = 0
    rolled_back: int = 0
    breaker_opened: bool = False
    final_parallelism: dict[str, int] = Field(default_factory=dict)


class MetricsReport(BaseModel):
    """
    Aggregates of one run.

    ``qps`` is the per-bucket count of records consumed by terminal tasks
    divided by the bucket width. Ledgers are excluded from the summary dump
    and written separately.
    """
    seed: int
    workload: str
    valid: bool = True
    error: Optional[str] = None
    virtual_end_s: float = 0.0
    bucket_s: float = 1.0

    created: int = 0
    consumed: int = 0
    terminal_consumed: int = 0
    records_dropped: int = 0
    drops: dict[str, int] = Field(default_factory=dict)
    inherent_misses: int = 0
    duplicates: int = 0
    in_flight: int = 0
    conservation_gap: int = 0

    qps: list[float] = Field(default_factory=list)
    qps_mean: float = 0.0
    qps_min: float = 0.0
    qps_steady: float = 0.0
    backlog_max: int = 0

    latency: LatencySummary = Field(default_factory=LatencySummary)
    checkpoints: CheckpointSummary = Field(default_factory=CheckpointSummary)
    recoveries: list[RecoveryEvent] = Field(default_factory=list)
    recovery_pending: bool = False
    max_recovery_time_s: Optional[float] = None
    restore_retries: int = 0
    standby_switches: int = 0
    job_terminated: bool = False
    leader_terminations: int = 0
    faults_armed: int = 0

    startup: Optional[StartupSummary] = None
    autoscale: Optional[AutoscaleSummary] = None

    input_records: int = 0
    output_keys: int = 0
    ledger_sha256: str = ""
    events: int = 0
    engine_digest: int = 0

    output_ledger: dict[int, int] = Field(default_factory=dict, exclude=True)
    input_ledger: dict[int, int] = Field(default_factory=dict, exclude=True)

    def recovery_windows_ns(self) -> list[tuple[int, int]]:
        return [(int(e.time_s * NS_PER_S), int((e.time_s + e.recovery_time_s) * NS_PER_S))
                for e in self.recoveries]


# ============================================================================
# SLO
# ============================================================================

class SloTarget(BaseModel):
    """Completeness class plus latency and recovery-time bounds."""
    gamma: Literal["full", "partial"] = "full"
    lambda_max_ns: int = Field(gt=0)
    tau_max_ns: int = Field(gt=0)
    max_dropped: Optional[int] = Field(default=None, ge=0)

    @classmethod
    def from_config(cls, config: SloConfig) -> "SloTarget":
        return cls(
            gamma=config.gamma,
            lambda_max_ns=int(config.lambda_max_ms * NS_PER_MS),
            tau_max_ns=int(config.tau_max_s * NS_PER_S),
            max_dropped=config.max_dropped,
        )


class SloVerdict(BaseModel):
    completeness_ok: bool
    latency_ok: bool
    recovery_ok: bool
    overall: bool
    explanation: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _overall_is_conjunction(self) -> "SloVerdict":
        if self.overall != (self.completeness_ok and self.latency_ok and self.recovery_ok):
            raise ValueError("overall must be the conjunction of the three checks")
        return self


# ============================================================================
# Micro-benchmarks
# ============================================================================

class MicrobenchRow(BaseModel):
    component: str
    case: str
    unit: str
    samples: list[float]
    mean: float
    stdev: float
    cv: float


class MicrobenchReport(BaseModel):
    components: list[str]
    repetitions: int
    rows: list[MicrobenchRow] = Field(default_factory=list)
    meta: dict[str, Any] = Field(default_factory=dict)
