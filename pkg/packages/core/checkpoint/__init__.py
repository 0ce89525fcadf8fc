"""
Checkpointing

Barrier-based global and region checkpoints, per-region merge, the simulated
snapshot store and lazy state restore.
"""
from .coordinator import CheckpointCoordinator
from .lazy import KeyedStateStore, LazyStateBackend, StateAccessError, chunk_of
from .merge import (
    MergeError,
    expected_region_lag,
    merge_region_checkpoints,
    predict_global_success,
    simulate_global_success,
    simulate_region_lag,
    simulate_region_success,
)
from .models import (
    CheckpointAttempt,
    CheckpointMode,
    CheckpointRegistry,
    GlobalCheckpointRecord,
    Outcome,
    RegionEntry,
    SnapshotHandle,
    TaskAck,
    TaskStatus,
)
from .restore import RestoreMode, RestorePlan, backoff_ns, restore_state
from .store import SnapshotStore, StoreUnavailable

__all__ = [
    "CheckpointAttempt",
    "CheckpointCoordinator",
    "CheckpointMode",
    "CheckpointRegistry",
    "GlobalCheckpointRecord",
    "KeyedStateStore",
    "LazyStateBackend",
    "MergeError",
    "Outcome",
    "RegionEntry",
    "RestoreMode",
    "RestorePlan",
    "SnapshotHandle",
    "SnapshotStore",
    "StateAccessError",
    "StoreUnavailable",
    "TaskAck",
    "TaskStatus",
    "backoff_ns",
    "chunk_of",
    "expected_region_lag",
    "merge_region_checkpoints",
    "predict_global_success",
    "restore_state",
    "simulate_global_success",
    "simulate_region_lag",
    "simulate_region_success",
]
