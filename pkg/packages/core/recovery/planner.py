"""
Recovery Planning

Maps a failure to the set of tasks to restart under the configured strategy
and the checkpoint record to restore them from.
"""
from __future__ import annotations

import logging
from typing import Optional

from ..checkpoint.models import CheckpointRegistry
from ..graph.models import RegionPartition, TaskId
from .models import FailureEvent, FailureScope, PolicyError, RecoveryPlan, RecoveryStrategy

logger = logging.getLogger(__name__)


def plan_recovery(
    failure: FailureEvent,
    strategy: RecoveryStrategy,
    regions: RegionPartition,
    registry: CheckpointRegistry,
    gamma: str = "full",
    source_offsets: Optional[dict[TaskId, int]] = None,
) -> RecoveryPlan:
    """
    Build the plan for one failure.

    SingleTask restarts exactly the failed tasks and is only allowed when the
    job tolerates incomplete output (gamma = partial). RegionFailover restarts
    the failed tasks' regions, FullRestart every task. A JobManager failure
    restarts nothing.
    """
    strategy = RecoveryStrategy(strategy)
    if strategy == RecoveryStrategy.SINGLE_TASK and gamma == "full":
        raise PolicyError("single-task recovery drops records; it needs gamma=partial",
                          strategy=strategy, gamma=gamma)

    record = registry.restore_target
    if failure.scope == FailureScope.JM or not failure.tasks:
        return RecoveryPlan(strategy, failure, frozenset(), record)

    failed = set(failure.tasks)
    hit = frozenset(regions.region_of(t) for t in failed)
    if strategy == RecoveryStrategy.SINGLE_TASK:
        tasks = frozenset(failed)
    elif strategy == RecoveryStrategy.REGION:
        tasks = frozenset(t for r in hit for t in regions.tasks_in(r))
    else:
        tasks = frozenset(regions.task_to_region)
        hit = frozenset(range(len(regions)))

    rewind: dict[TaskId, int] = {}
    if record is not None and source_offsets and strategy != RecoveryStrategy.SINGLE_TASK:
        for task in tasks:
            if task in source_offsets:
                restored = record.entry(regions.region_of(task)).offsets.get(task, 0)
                rewind[task] = max(0, source_offsets[task] - restored)

    logger.debug(f"{strategy.value} plan for {len(failed)} failed tasks: "
                 f"{len(tasks)} restarts in regions {sorted(hit)}")
    return RecoveryPlan(strategy, failure, tasks, record, hit, rewind)
