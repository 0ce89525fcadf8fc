import hypothesis.strategies as st
from hypothesis import given

from packages.core.seeding import RngStreams, stable_hash, unit_hash


class TestStableHash:
    def test_known_inputs_are_stable(self):
        assert stable_hash("route", 7) == stable_hash("route", 7)
        assert stable_hash("route", 7) != stable_hash("route", 8)
        assert stable_hash(("a", 1)) == stable_hash(("a", 1))

    def test_strings_and_bytes_agree(self):
        assert stable_hash("abc") == stable_hash(b"abc")

    @given(st.integers(), st.text())
    def test_fits_in_64_bits(self, number, text):
        assert 0 <= stable_hash(number, text) < 1 << 64

    @given(st.integers(min_value=0, max_value=1 << 40))
    def test_unit_hash_in_unit_interval(self, key):
        assert 0.0 <= unit_hash("filter", key) < 1.0


class TestRngStreams:
    def test_named_streams_are_independent_of_request_order(self):
        a = RngStreams(42)
        b = RngStreams(42)
        a.get("workload")
        first = a.get("chaos").integers(0, 1 << 30, size=5).tolist()
        second = b.get("chaos").integers(0, 1 << 30, size=5).tolist()
        assert first == second

    def test_get_is_cached_and_derive_is_fresh(self):
        streams = RngStreams(3)
        assert streams.get("store") is streams.get("store")
        x = streams.derive("workload", 0, 1).random()
        y = streams.derive("workload", 0, 1).random()
        assert x == y
        assert streams.derive("workload", 0, 2).random() != x

    def test_seeds_differ(self):
        assert RngStreams(1).get("chaos").random() != RngStreams(2).get("chaos").random()
