"""
Idempotent Job Submission

Retried submission with exponential backoff against a scripted
orchestration endpoint that validates job uniqueness per idempotency key.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Union

from ..runtime.engine import NS_PER_S
from .models import Accepted, Rejected, SubmissionRequest

logger = logging.getLogger(__name__)


class EndpointUnavailable(Exception):
    def __init__(self, at_ns: int):
        super().__init__(f"orchestration endpoint unavailable at {at_ns}")
        self.at_ns = at_ns


@dataclass
class RetryPolicy:
    base_ns: int = NS_PER_S
    factor: float = 2.0
    max_attempts: int = 5

    def delay_ns(self, attempt: int) -> int:
        """Delay after the attempt-th (0-based) failure: base * factor^attempt."""
        return int(self.base_ns * self.factor ** attempt)


@dataclass
class OrchestrationEndpoint:
    """
    Endpoint with scripted downtime and lost acknowledgements.

    `down_windows` are [start, end) ns intervals; `lost_acks` holds global
    call indices whose response never reaches the client even though the
    request was processed.
    """
    down_windows: list[tuple[int, int]] = field(default_factory=list)
    lost_acks: set[int] = field(default_factory=set)
    accepted: dict[str, str] = field(default_factory=dict)
    executions: Counter = field(default_factory=Counter)
    calls: int = 0

    def is_up(self, now_ns: int) -> bool:
        return not any(start <= now_ns < end for start, end in self.down_windows)

    def submit(self, request: SubmissionRequest, now_ns: int) -> tuple[str, bool]:
        """
        Process one submission; returns (job id, existing).

        Raises EndpointUnavailable when down, or TimeoutError when the
        acknowledgement is lost after processing.
        """
        call = self.calls
        self.calls += 1
        if not self.is_up(now_ns):
            raise EndpointUnavailable(now_ns)
        existing = request.idempotency_key in self.accepted
        if not existing:
            self.accepted[request.idempotency_key] = request.job_id
            self.executions[request.idempotency_key] += 1
        if call in self.lost_acks:
            raise TimeoutError(f"ack for call {call} lost")
        return self.accepted[request.idempotency_key], existing


def submit_with_retry(
    request: SubmissionRequest,
    endpoint: OrchestrationEndpoint,
    policy: RetryPolicy,
    start_ns: int = 0,
) -> Union[Accepted, Rejected]:
    """Submit until acknowledged or the attempt budget is spent."""
    now = start_ns
    delays: list[int] = []
    for attempt in range(policy.max_attempts):
        request.attempts = attempt + 1
        try:
            job_id, existing = endpoint.submit(request, now)
            return Accepted(job_id, request.attempts, existing, delays)
        except (EndpointUnavailable, TimeoutError) as e:
            logger.debug(f"Submission {request.idempotency_key} attempt {attempt + 1} failed: {e}")
            if attempt + 1 < policy.max_attempts:
                delay = policy.delay_ns(attempt)
                delays.append(delay)
                now += delay
    logger.warning(f"Submission {request.idempotency_key} rejected after "
                   f"{policy.max_attempts} attempts")
    return Rejected("Unavailable", request.attempts, delays)
