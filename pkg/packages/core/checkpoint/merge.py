"""
Region Checkpoint Merge

Builds the merged global record from per-region outcomes, and the analytic
and Monte Carlo success models used to reason about global vs. region mode.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .models import CheckpointRegistry, GlobalCheckpointRecord, RegionEntry

logger = logging.getLogger(__name__)


class MergeError(Exception):
    """A region cannot contribute to the merged record."""

    UNRESTORABLE = "UnrestorableRegion"
    STALE = "StaleRegion"

    def __init__(self, kind: str, region: int, detail: str = ""):
        super().__init__(f"{kind}: region {region}{' ' + detail if detail else ''}")
        self.kind = kind
        self.region = region


def merge_region_checkpoints(
    region_outcomes: dict[int, Optional[RegionEntry]],
    registry: CheckpointRegistry,
    current_id: Optional[int] = None,
    max_region_lag: Optional[int] = None,
) -> GlobalCheckpointRecord:
    """
    Merge the current attempt's successful regions with the newest earlier
    success of every failed region, and register the result as restore target.

    `region_outcomes` maps region -> entry when the region succeeded in the
    current attempt, or None when it failed. Every region is checked before
    the registry changes, so a MergeError leaves it untouched.
    """
    regions = sorted(set(region_outcomes) | set(range(registry.regions)))
    entries: dict[int, RegionEntry] = {}
    for region in regions:
        outcome = region_outcomes.get(region)
        entry = registry.latest.get(region)
        if outcome is not None and (entry is None or outcome.checkpoint_id >= entry.checkpoint_id):
            entry = outcome
        if entry is None:
            raise MergeError(MergeError.UNRESTORABLE, region, "has no successful checkpoint")
        if (outcome is None and max_region_lag is not None
                and current_id is not None and current_id - entry.checkpoint_id > max_region_lag):
            raise MergeError(MergeError.STALE, region,
                             f"lags {current_id - entry.checkpoint_id} attempts")
        entries[region] = entry

    for region, outcome in region_outcomes.items():
        if outcome is not None:
            registry.update(region, outcome)
    record = registry.publish(GlobalCheckpointRecord(registry.next_record_id(), entries))
    logger.debug(f"Merged record {record.record_id}: {record.checkpoint_ids()}")
    return record


# ============================================================================
# Success Models
# ============================================================================

def predict_global_success(p_task_fail: float, n_tasks: int) -> float:
    """Probability that a global attempt sees zero task failures: (1 - p)^n."""
    if not 0.0 <= p_task_fail <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p_task_fail}")
    if n_tasks < 1:
        raise ValueError(f"n must be >= 1, got {n_tasks}")
    return float((1.0 - p_task_fail) ** n_tasks)


def simulate_global_success(p_task_fail: float, n_tasks: int, attempts: int,
                            rng: np.random.Generator) -> float:
    """Monte Carlo estimate of predict_global_success."""
    failures = rng.binomial(n_tasks, p_task_fail, size=attempts)
    return float(np.mean(failures == 0))


def simulate_region_success(
    p_task_fail: float,
    tasks_per_region: int,
    regions: int,
    attempts: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """
    Monte Carlo (global success rate, per-region success rate) for independent
    per-task failures.
    """
    failures = rng.binomial(tasks_per_region, p_task_fail, size=(attempts, regions))
    region_ok = failures == 0
    return float(np.mean(region_ok.all(axis=1))), float(np.mean(region_ok))


def expected_region_lag(success_prob: float) -> float:
    """Mean attempts since a region's last success under a geometric model."""
    if not 0.0 < success_prob <= 1.0:
        raise ValueError(f"success probability must be in (0, 1], got {success_prob}")
    return (1.0 - success_prob) / success_prob


def simulate_region_lag(success_prob: float, regions: int, attempts: int,
                        rng: np.random.Generator) -> float:
    """Mean freshness lag of merged records over independent region outcomes."""
    ok = rng.random((attempts, regions)) < success_prob
    lag = np.zeros(regions)
    total = 0.0
    for row in ok:
        lag = np.where(row, 0, lag + 1)
        total += lag.mean()
    return total / attempts
