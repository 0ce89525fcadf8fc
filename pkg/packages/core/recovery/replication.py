"""
Active Standby

Pre-deployed standby replicas on a different TaskManager. Operators are
deterministic, so a standby that consumed the same inputs holds the same
state; promotion only re-points the output gate.
"""
from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from ..graph.models import ExecutionGraph, TaskId
from ..runtime.task import TaskState
from .models import PolicyError, SwitchReport

if TYPE_CHECKING:
    from ..runtime.dataflow import Dataflow
    from ..runtime.task import Cluster

logger = logging.getLogger(__name__)


def assign_standbys(exec_graph: ExecutionGraph, offset: int = 1) -> dict[TaskId, str]:
    """
    Place each task's standby `offset` TaskManagers after its primary.

    Raises PolicyError when an operator is not deterministic.
    """
    for op in exec_graph.logical.operators:
        if not op.kind.deterministic:
            raise PolicyError(f"operator {op.id} ({op.kind.value}) is not deterministic; "
                              f"active standby cannot replicate it")
    tm_ids = list(exec_graph.tm_ids)
    position = {tm: i for i, tm in enumerate(tm_ids)}
    if len(tm_ids) < 2:
        logger.warning("Active standby needs at least two TaskManagers; standbys share the primary")
    return {task: tm_ids[(position[tm] + offset) % len(tm_ids)]
            for task, tm in exec_graph.placement.items()}


def standby_alive(dataflow: "Dataflow", cluster: "Cluster", task_id: TaskId) -> bool:
    task = dataflow.tasks[task_id]
    standby = task.standby_tm
    if standby is None or standby == task.tm_id:
        return False
    tm = cluster.tms.get(standby)
    return tm is not None and tm.alive


def promote_standby(dataflow: "Dataflow", cluster: "Cluster", task_id: TaskId,
                    detection_ns: int, lag_records: int = 0) -> SwitchReport:
    """
    Promote the standby of a failed primary.

    The standby opens its gate after draining `lag_records` records; a dead
    standby returns a fallback report and leaves the task Failed.
    """
    task = dataflow.tasks[task_id]
    if task.state != TaskState.FAILED or not standby_alive(dataflow, cluster, task_id):
        logger.info(f"Standby of {task_id} unavailable: falling back to passive recovery")
        return SwitchReport(task_id, task.standby_tm, 0, fallback=True)

    standby = task.standby_tm
    tm = cluster.tms[standby]
    tm.hosted.append(task_id)
    task.standby_tm = task.tm_id
    dataflow.move_task(task, standby)
    task.transition(TaskState.RECOVERING)
    dataflow.start_task(task, bump_epoch=False)
    switch = detection_ns + lag_records * task.service_ns
    logger.debug(f"Promoted standby of {task_id} on {standby}")
    return SwitchReport(task_id, standby, switch)
