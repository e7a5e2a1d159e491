import pytest

from stockcast.layering import Region, RingLayout
from stockcast.reformation import (
    FailureReport, ReformationFailed, ReformationServerState, TotalFailure, XrFailover, begin,
    choose_ring, failover_xr, quorum, reassign_scopes, record_join, run_reformation,
)


def test_ticker_picks_highest_next_token_at_lowest_id():
    members, start, site, donor = choose_ring({"P2": 9, "P0": 11, "P1": 11}, ["P0", "P1", "P2", "P3"])
    assert (start, site, donor) == (11, "P0", "P0")
    assert members == ["P0", "P1", "P2"]


def test_secondary_donor_when_no_primary_is_ahead():
    members, start, site, donor = choose_ring({"P0": 5, "P1": 6, "S9": 7}, ["P0", "P1"])
    assert (start, site, donor) == (7, "P1", "S9")


def test_conservative_quorum():
    assert quorum(4) == 3 and quorum(3) == 2
    with pytest.raises(ReformationFailed):
        choose_ring({"P0": 3, "P9": 3}, ["P0", "P1", "P2", "P3"], "conservative", {"P0", "P1", "P2", "P3", "P9"})
    choose_ring({"P0": 3, "P1": 3, "P2": 2}, ["P0", "P1", "P2", "P3"], "conservative")


def test_too_few_responders():
    with pytest.raises(ReformationFailed):
        choose_ring({"P0": 3}, ["P0", "P1"])


def test_server_lifecycle():
    layout = RingLayout(["P0", "P1", "P2"], regions={"P0": Region("P0", {"C": "guaranteed"}, "P1")})
    srv = ReformationServerState("X0", layout)
    report = FailureReport("P1", "TokenNotPassed", {"t": 4})
    assert begin(srv, report)
    assert not begin(srv, report)  # already running
    record_join(srv, "P1", 5)
    record_join(srv, "P2", 4)
    ring = run_reformation(srv)
    assert ring.epoch == 1 and ring.members == ("P1", "P2") and ring.token_site == "P1"
    assert ring.scopes == (("P0", "P1", "P2"),)
    assert not begin(srv, FailureReport("P2", "TokenNotPassed", {"t": 4}, epoch=0))  # stale epoch


def test_report_validation():
    with pytest.raises(ValueError):
        FailureReport("P0", "Bored", {})
    with pytest.raises(ValueError):
        FailureReport("P0", "TokenNotPassed", None)


def test_scope_reassignment_keeps_two_sources():
    layout = RingLayout(["P0", "P1", "P2"], regions={"P0": Region("P0", {"C": "guaranteed"}, "P1")})
    assert reassign_scopes(layout, {"P1", "P2"}) == (("P0", "P1", "P2"),)


def test_server_failover():
    assert failover_xr(["X0", "X1"], lambda s: True, 3) == ("X0", 1)
    assert failover_xr(["X0", "X1"], lambda s: s == "X1", 3) == ("X1", 4)
    with pytest.raises(TotalFailure):
        failover_xr(["X0", "X1"], lambda s: False, 2)
    cur = XrFailover(["X0"], 0)
    assert cur.on_timeout() is None
