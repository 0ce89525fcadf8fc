from functools import partial

import pytest

from packages.core.runtime.engine import (
    NS_PER_S,
    Engine,
    EngineError,
    action_id,
    millis,
    seconds,
)


class TestEngine:
    def test_events_fire_in_time_then_sequence_order(self):
        engine = Engine()
        fired = []
        engine.schedule(20, fired.append, "late")
        engine.schedule(10, fired.append, "first")
        engine.schedule(10, fired.append, "second")
        engine.run_until(100)
        assert fired == ["first", "second", "late"]
        assert engine.processed == 3
        assert engine.pending == 0

    def test_run_until_is_inclusive_and_advances_clock(self):
        engine = Engine()
        fired = []
        engine.at(50, fired.append, 50)
        engine.at(51, fired.append, 51)
        assert engine.run_until(50) == 1
        assert fired == [50]
        assert engine.now == 50
        engine.run_until(200)
        assert fired == [50, 51]
        assert engine.now == 200

    def test_events_can_schedule_more_events(self):
        engine = Engine()
        ticks = []

        def tick():
            ticks.append(engine.now)
            if engine.now < 30:
                engine.schedule(10, tick)

        engine.schedule(0, tick)
        engine.run_until(1000)
        assert ticks == [0, 10, 20, 30]

    def test_queue_overflow_raises(self):
        engine = Engine(max_pending=2)
        engine.schedule(1, lambda: None)
        engine.schedule(1, lambda: None)
        with pytest.raises(EngineError) as info:
            engine.schedule(1, lambda: None)
        assert info.value.pending == 2

    def test_negative_delay_raises(self):
        with pytest.raises(EngineError):
            Engine().schedule(-1, lambda: None)

    def test_digest_is_reproducible(self):
        def build():
            engine = Engine()
            for i in range(50):
                engine.schedule(i * 3 % 17, lambda: None)
            engine.run_until(100)
            return engine.digest

        assert build() == build()

    def test_digest_tells_actions_apart(self):
        def first():
            pass

        def second():
            pass

        def build(action):
            engine = Engine()
            for i in range(5):
                engine.schedule(i, action)
            engine.run_until(10)
            return engine.digest

        assert build(first) != build(second)
        assert build(first) == build(first)

    def test_action_id_sees_through_partials(self):
        def tick(n):
            return n

        assert action_id(partial(tick, 1)) == action_id(partial(tick, 2)) == action_id(tick)
        assert action_id([].append) == action_id([1].append)

    def test_unit_helpers(self):
        assert seconds(1.5) == 3 * NS_PER_S // 2
        assert millis(2) == 2_000_000
