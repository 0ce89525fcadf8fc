"""
Control Plane

Startup pipeline with phase timing, batched deployment, slow-TaskManager
mitigation, HotUpdate, leader-metadata HA and idempotent submission.
"""
from .leader import LeaderInfo, LeaderOutcome, LeaderService, TerminateJobs, resolve_leader
from .models import (
    Accepted,
    ClusterModel,
    CoordinationRole,
    CoordinationStore,
    CoordinationUnavailable,
    LeaderRecord,
    Rejected,
    StartupReport,
    SubmissionRequest,
)
from .startup import (
    AllocationState,
    MitigationActions,
    StartupError,
    allocate,
    hot_update,
    mitigate_slow_tms,
    run_startup,
)
from .submission import EndpointUnavailable, OrchestrationEndpoint, RetryPolicy, submit_with_retry

__all__ = [
    "Accepted",
    "AllocationState",
    "ClusterModel",
    "CoordinationRole",
    "CoordinationStore",
    "CoordinationUnavailable",
    "EndpointUnavailable",
    "LeaderInfo",
    "LeaderOutcome",
    "LeaderRecord",
    "LeaderService",
    "MitigationActions",
    "OrchestrationEndpoint",
    "Rejected",
    "RetryPolicy",
    "StartupError",
    "StartupReport",
    "SubmissionRequest",
    "TerminateJobs",
    "allocate",
    "hot_update",
    "mitigate_slow_tms",
    "resolve_leader",
    "submit_with_retry",
]
