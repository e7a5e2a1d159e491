"""End-to-end runs of small deployments."""
from decimal import Decimal

from stockcast.experiments import crash_scenario, floor_crash, token_site_crash
from stockcast.runner import Simulation, run_scenario
from stockcast.scenario import Scenario, generate_topology
from stockcast.verify import all_passed, parse_trace, verify_records
from tracekit import load, trace_of


def small(m, messages, loss=0.0, seed=1, horizon=2.0):
    sc = Scenario(seed=seed, horizon=horizon, delta_n=0.012, k_r=2, messages=messages, duration=1.0)
    generate_topology(sc, m, 2, node_loss=loss)
    return sc


def logs(sim):
    return {n.id: [n.state.log[g].label for g in sorted(n.state.log)] for n in sim.receivers}


def test_four_primaries_lossless_logs_identical():
    sim = Simulation(small(4, 10))
    sim.run()
    views = logs(sim)
    assert len({tuple(v) for v in views.values()}) == 1 and len(views["P0"]) == 10
    records = parse_trace(sim.trace.dumps())
    control = sum(r.kind in ("ack_emit", "request", "retransmit", "report") for r in records)
    assert control == round(2.0 * 1e6) // sim.cfg.tau_t


def test_lossy_run_recovers_every_gap():
    sim = Simulation(small(8, 200, loss=0.05, seed=5))
    sim.run()
    records = parse_trace(sim.trace.dumps())
    assert any(r.kind == "loss" for r in records)
    assert all_passed(verify_records(records))
    views = list(logs(sim).values())
    shortest = min(len(v) for v in views)
    assert all(v[:shortest] == views[0][:shortest] for v in views)
    assert shortest == 200


def test_runs_are_byte_identical():
    assert run_scenario(load("lossy")).trace_text == run_scenario(load("lossy")).trace_text


def test_token_site_crash_reforms_and_resumes():
    out = token_site_crash(seed=4)
    assert out.resumed and out.verify_ok, out.counterexample


def test_report_arrives_after_the_give_up_time():
    sc = crash_scenario(2)
    sc.crash_token_site = [1.2]
    sim = Simulation(sc)
    sim.run()
    records = parse_trace(sim.trace.dumps())
    crash = next(r for r in records if r.kind == "crash")
    report = next(r for r in records if r.kind == "report" and r.fields["reason"] == "TokenNotPassed")
    assert report.at - crash.at >= sim.cfg.delta_n
    done = next(r for r in records if r.kind == "reform_done")
    assert crash.node not in done.list("members")


def test_floor_trade_survives_primary_loss():
    out = floor_crash(seed=3)
    assert out.verify_ok and out.durable and out.confirmed > 0


def test_regions_switch_to_fallback():
    records = parse_trace(trace_of("regions"))
    assert {r.node for r in records if r.kind == "fallback"} >= {"C1", "C2"}
    assert any(r.kind == "repair_req" for r in records if r.node == "C1")
    assert not any(r.kind == "repair_req" for r in records if r.node == "C2")


def test_order_gate_rejects_unfunded_trader():
    sc = small(3, 30)
    sc.app = "orders"
    sc.symbols = ["ACME"]
    sc.traders = {"T0": ("A0", Decimal(0), {}), "T1": ("A1", Decimal(10**9), {"ACME": 10**6})}
    metrics = run_scenario(sc).metrics
    assert int(metrics["orders_rejected"]) > 0
    assert int(metrics["messages_committed"]) + int(metrics["orders_rejected"]) == 30
