import pytest
from hypothesis import given, strategies as st

from stockcast.core import AckMessage, SourceMessage
from stockcast.nack import may_request, nack_sets, recovered_keys, suppress_on_overheard, wave_of


def test_example_sets():
    assert nack_sets(0, 12, 3) == [[1, 4, 7, 10], [2, 5, 8, 11], [3, 6, 9, 0]]
    assert nack_sets(2, 5, 2) == [[3, 0, 2], [4, 1]]
    assert sorted(nack_sets(4, 6, 1)[0]) == list(range(6))


def test_k_p_out_of_range():
    with pytest.raises(ValueError, match="k_p"):
        nack_sets(0, 4, 5)
    with pytest.raises(ValueError):
        nack_sets(0, 4, 0)


def test_request_timing_examples():
    assert may_request(4, 10, 0, 10, 12, 3)
    assert not may_request(3, 10, 0, 10, 12, 3)
    assert may_request(3, 10, 0, 12, 12, 3)
    with pytest.raises(ValueError):
        may_request(3, 10, 0, 9, 12, 3)


def test_suppression():
    pending = {("A", 17): 1}
    assert suppress_on_overheard(pending, SourceMessage("A", 17)) == {}
    assert suppress_on_overheard(pending, SourceMessage("A", 18)) == pending
    assert suppress_on_overheard({}, SourceMessage("A", 17)) == {}
    assert suppress_on_overheard({17}, 17) == set()


def test_recovered_keys_flatten_bundles():
    ack = AckMessage(5, 0, "A", "B", 1, (("s", 1),))
    assert recovered_keys([ack, SourceMessage("s", 1)]) == {5, ("s", 1)}


@given(st.data())
def test_sets_partition_the_ring_and_agree_with_wave_of(data):
    m = data.draw(st.integers(1, 64))
    k_p = data.draw(st.integers(1, m))
    r = data.draw(st.integers(0, m - 1))
    sets = nack_sets(r, m, k_p)
    flat = [x for s in sets for x in s]
    assert sorted(flat) == list(range(m))
    assert max(len(s) for s in sets) - min(len(s) for s in sets) <= 1
    for i, s in enumerate(sets):
        for pos in s:
            assert wave_of(pos, r, m, k_p) == i


@given(st.data())
def test_everyone_may_ask_within_k_p_passes(data):
    m = data.draw(st.integers(1, 64))
    k_p = data.draw(st.integers(1, m))
    r = data.draw(st.integers(0, m - 1))
    t = data.draw(st.integers(1, 10_000))
    for pos in range(m):
        assert may_request(pos, t, r, t + k_p - 1, m, k_p)
