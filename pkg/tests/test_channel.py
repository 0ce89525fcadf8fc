from packages.core.graph.models import TaskId
from packages.core.runtime.channel import Channel, SendOutcome
from packages.core.runtime.records import Barrier, Record


def _record(rid: int) -> Record:
    return Record(rid=rid, key=rid, emit_ns=0, event_ns=0)


def _channel(capacity: int = 2) -> Channel:
    return Channel(TaskId("a", 0), TaskId("b", 0), capacity=capacity)


class TestCredits:
    def test_blocks_when_credits_are_exhausted(self):
        ch = _channel(capacity=2)
        assert ch.send(_record(1), 0) == SendOutcome.ENQUEUED
        assert ch.send(_record(2), 0) == SendOutcome.ENQUEUED
        assert ch.credits == 0
        assert ch.send(_record(3), 0) == SendOutcome.BLOCKED
        assert ch.backlog == 2

    def test_take_admits_one_waiter_and_notifies_it(self):
        ch = _channel(capacity=1)
        woken = []
        ch.send(_record(1), 0)
        ch.send(_record(2), 0, lambda: woken.append(2))
        ch.send(_record(3), 0, lambda: woken.append(3))
        taken = ch.take(5)
        assert taken.rid == 1
        assert woken == [2]
        assert ch.backlog == 1
        assert [item.rid for _, item in ch.queue] == [2]

    def test_admitted_waiter_consumes_the_freed_credit(self):
        ch = _channel(capacity=1)
        ch.send(_record(1), 0)
        ch.send(_record(2), 0)
        ch.take(1)
        assert ch.send(_record(3), 1) == SendOutcome.BLOCKED

    def test_dead_consumer_drops(self):
        ch = _channel()
        ch.consumer_alive = False
        assert ch.send(_record(1), 0) == SendOutcome.DROPPED
        assert ch.send_barrier(Barrier(1), 0) is False


class TestVisibilityAndBarriers:
    def test_delay_hides_records_until_visible(self):
        ch = _channel()
        ch.delay_ns = 10
        ch.send(_record(1), 0)
        assert ch.head(5) is None
        assert ch.head(10).rid == 1
        assert ch.next_visible_at() == 10

    def test_barrier_bypasses_credits_but_keeps_order(self):
        ch = _channel(capacity=1)
        ch.send(_record(1), 0)
        assert ch.send_barrier(Barrier(4), 0)
        assert ch.backlog == 1
        assert ch.take(0).rid == 1
        assert ch.take(0) == Barrier(4)

    def test_clear_counts_queue_and_waiters(self):
        ch = _channel(capacity=1)
        woken = []
        ch.send(_record(1), 0)
        ch.send(_record(2), 0, lambda: woken.append(True))
        dropped, callbacks = ch.clear()
        assert dropped == 2
        assert len(callbacks) == 1
        assert ch.backlog == 0 and not ch.waiters

    def test_raising_capacity_admits_waiters(self):
        ch = _channel(capacity=1)
        ch.send(_record(1), 0)
        ch.send(_record(2), 0)
        ch.set_capacity(4, 0)
        assert ch.backlog == 2
        assert not ch.waiters
