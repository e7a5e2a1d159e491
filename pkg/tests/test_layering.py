import math

import pytest
from hypothesis import given, settings, strategies as st

from oracles.derive_values import min_stripes
from stockcast.core import AckMessage, ReceiverState, SourceMessage, on_ack, on_source_message
from stockcast.layering import (
    CustomerState, Hold, Pass, PermanentlyLost, Region, Remulticast, RepairRequest, RepairServer,
    RingLayout, SecondaryRing, absorb_repair, assign_stripes, assigned_primary, edge_repair, layer_size,
    passes_to_detect, secondary_gate,
)


def test_layer_sizes():
    assert layer_size(10_000, 2) == 100
    assert layer_size(100, 2) == 10
    assert layer_size(37, 1) == 37
    assert passes_to_detect(10_000, 2) == 100
    with pytest.raises(ValueError):
        layer_size(0, 2)


def _secondary():
    rs = ReceiverState("S1", ["S1", "S2", "P0"])
    on_source_message(rs, SourceMessage("A", 1))
    on_ack(rs, AckMessage(1, 0, "P0", "P1", 1, (("A", 1),)))
    return rs


def test_gate_passes_when_complete_and_is_idempotent():
    rs = _secondary()
    assert secondary_gate(rs, 1) == Pass(1)
    assert secondary_gate(rs, 0) == Pass(0)


def test_gate_holds_on_missing_ack():
    rs = _secondary()
    assert secondary_gate(rs, 3) == Hold((2, 3))


def test_gate_holds_on_missing_message():
    rs = ReceiverState("S1", ["S1", "P0"])
    on_ack(rs, AckMessage(1, 0, "P0", "P1", 1, (("A", 1),)))
    assert secondary_gate(rs, 1) == Hold((("A", 1),))


def test_assigned_primary_skips_token_holders():
    assert assigned_primary(["P1", "P2"], lambda p: p == "P1") == "P2"
    with pytest.raises(LookupError):
        assigned_primary(["P1"], lambda p: True)


def _packet(token, base, n):
    return Remulticast("P0", token, base, tuple((g, "A", g, b"x") for g in range(base, base + n)))


def test_guaranteed_customer_requests_gap_and_recovers():
    cust = CustomerState("C1", "guaranteed")
    assert edge_repair(cust, _packet(1, 1, 6)) == []
    reqs = edge_repair(cust, _packet(3, 8, 2))
    assert reqs == [RepairRequest("C1", (7,))]
    server = RepairServer("P0", m=4)
    server.retain(_packet(2, 7, 1))
    for reply in server.serve(reqs[0]):
        absorb_repair(cust, reply)
    assert 7 in cust.delivered and not cust.missing


def test_best_effort_customer_never_requests():
    cust = CustomerState("C2", "best_effort")
    edge_repair(cust, _packet(1, 1, 6))
    assert edge_repair(cust, _packet(3, 8, 2)) == []
    assert cust.missing == {7}


def test_lossless_region_makes_no_requests():
    cust = CustomerState("C1", "guaranteed")
    assert all(edge_repair(cust, _packet(t, 1 + 3 * (t - 1), 3)) == [] for t in range(1, 20))


def test_repair_server_forgets_below_watermark_margin():
    server = RepairServer("P0", m=2)
    server.retain(_packet(1, 1, 1))
    server.retain(_packet(10, 2, 1))  # all_have 9, margin 4 -> floor token 5
    assert 1 not in server.retained and 2 in server.retained
    cust = CustomerState("C1", "guaranteed")
    reply = server.serve(RepairRequest("C1", (1, 2)))
    assert isinstance(reply[-1], PermanentlyLost)
    for r in reply:
        absorb_repair(cust, r)
    assert cust.lost_for_good == {1}


def test_layout_validation():
    good = RingLayout(["P0", "P1"], [SecondaryRing("r", ["S0"], "P0", ["P1"])],
                      regions={"P0": Region("P0", {"C": "guaranteed"}, "P1")})
    good.validate()
    with pytest.raises(ValueError, match="second remulticast"):
        RingLayout(["P0"], regions={"P0": Region("P0", {"C": "guaranteed"})}).validate()
    with pytest.raises(ValueError, match="exactly one primary"):
        RingLayout(["P0", "P1"], [SecondaryRing("r", ["P1"], "P0", ["P1"])]).validate()


def test_stripe_examples():
    table = assign_stripes({"A": 30, "B": 30, "C": 30}, 56)
    assert len(table.stripes) == 3
    table.validate()
    assert len(assign_stripes({"A": 30}, 56).stripes) == 1
    with pytest.raises(ValueError):
        assign_stripes({"A": 60}, 56)


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.sampled_from("ABCDEFG"), st.integers(1, 56), min_size=1, max_size=6))
def test_stripes_are_valid_and_near_minimal(rates):
    table = assign_stripes(rates, 56)
    table.validate()
    assert set().union(*(s.symbols for s in table.stripes)) == set(rates)
    for s in table.stripes:
        assert s.aggregate_rate == sum(rates[x] for x in s.symbols)
    best = min_stripes(rates, 56)
    # first-fit decreasing guarantee
    assert best <= len(table.stripes) <= math.floor(11 * best / 9 + 6 / 9)
