import pytest

from stockcast.verify import (
    TraceError, all_passed, compute_metrics, format_metrics, parse_metrics, parse_trace, verify_text,
)
from tracekit import edit_lines, insert_after, trace_of


def result(text, name):
    return next(r for r in verify_text(text) if r.name == name)


@pytest.mark.parametrize("name", ["lossless", "lossy", "nack_m12_kp3", "layering_100", "floor_failure", "regions"])
def test_packaged_runs_verify(name):
    results = verify_text(trace_of(name))
    assert all_passed(results), [r.line() for r in results if not r.ok]
    assert result(trace_of(name), "total_order").checked > 0


def test_lossless_run_exercises_control_economy():
    r = result(trace_of("lossless"), "control_economy")
    assert r.ok and not r.skipped and r.checked == 1


def test_reordered_commit_breaks_total_order():
    def swap(cols):
        fields = dict(tok.split("=", 1) for tok in cols[3].split(" "))
        a, b, *rest = fields["labels"].split(",")
        fields["labels"] = ",".join([b, a, *rest])
        cols[3] = " ".join(f"{k}={v}" for k, v in fields.items())
        return "\t".join(cols)
    bad = edit_lines(trace_of("lossless"), lambda c: c[2] == "commit" and c[1] == "P3" and "," in c[3], swap)
    r = result(bad, "total_order")
    assert not r.ok and "P3 commit" in r.counterexample and "line " in r.counterexample


def test_missing_commits_break_the_knowledge_chain():
    lines = [ln for ln in trace_of("lossless").splitlines()
             if not (ln.split("\t")[1] == "P2" and ln.split("\t")[2] == "commit")]
    text = "\n".join(lines) + "\n"
    assert not result(text, "knowledge_chain").ok
    assert not result(text, "watermarks").ok


def test_second_token_holder_is_caught():
    text = trace_of("lossless")
    first = next(ln for ln in text.splitlines() if "\taccept\t" in ln and "t=3 " in ln)
    at = first.split("\t")[0]
    bad = insert_after(text, lambda c: c[0] == at and c[2] == "accept", f"{at}\tP7\taccept\tt=3 epoch=0")
    assert not result(bad, "single_acknowledger").ok


def test_staggered_release_is_caught():
    def shift(cols):
        cols[0] = f"{float(cols[0]) + 0.001:.6f}"
        return "\t".join(cols)
    bad = edit_lines(trace_of("lossless"), lambda c: c[2] == "release" and c[1] == "P5", shift)
    r = result(bad, "release_spread")
    assert not r.ok and "1000us" in r.counterexample


def test_extra_control_message_breaks_economy():
    text = trace_of("lossless")
    bad = insert_after(text, lambda c: c[2] == "ack_emit", "0.500000\tP1\trequest\tto=P0 acks=- tokens=9")
    assert not result(bad, "control_economy").ok


def test_early_request_breaks_nack_bounds():
    text = trace_of("nack_m12_kp3")
    # for a token sent by P9, P11 is in the second wave and must wait one more token
    ack = next(ln for ln in text.splitlines() if "\tack_emit\t" in ln and "\tP9\t" in ln)
    at, t = ack.split("\t")[0], ack.split("t=")[1].split(" ")[0]
    bad = insert_after(text, lambda c: c[0] == at and c[2] == "ack_emit",
                       f"{at}\tP11\trequest\tto=P3 acks={t} tokens={t}")
    r = result(bad, "nack_bounds")
    assert not r.ok and "wave" in r.counterexample


def test_secondary_request_at_token_holder_is_caught():
    text = trace_of("layering_100")
    sec = next(ln.split("\t")[1] for ln in text.splitlines() if "\tring\t" in ln and "role=secondary" in ln)
    bad = insert_after(text, lambda c: c[2] == "ack_emit",
                       f"0.300000\tP0\trequest_recv\tfrm={sec} holder=1 acks=- labels=-")
    assert not result(bad, "repair_isolation").ok


def test_secondary_pass_ahead_of_ring_is_caught():
    text = trace_of("layering_100")
    line = next(ln for ln in text.splitlines() if "\tsec_pass\t" in ln)
    cols = line.split("\t")
    fields = dict(tok.split("=", 1) for tok in cols[3].split(" "))
    fields["n"] = "9999"
    forged = "\t".join([cols[0], cols[1], cols[2], " ".join(f"{k}={v}" for k, v in fields.items())])
    bad = insert_after(text, lambda c: "\t".join(c) == line, forged)
    assert not result(bad, "secondary_soundness").ok


@pytest.mark.parametrize("text,line", [
    ("0.000000\t-\tmeta\tseed=1\nnot a record\n", 2),
    ("0.000000\t-\tmeta\tseed=1\n0.1\tP0\tcommit\tbroken\n", 2),
    ("0.000000\tP0\tcommit\tt=1\n", 1),
    ("0.000000\t-\tmeta\tseed=1\nx.y\tP0\tcommit\tt=1\n", 2),
])
def test_malformed_trace_names_line(text, line):
    with pytest.raises(TraceError) as err:
        parse_trace(text)
    assert err.value.line == line and f"trace line {line}" in str(err.value)


def test_metrics_round_trip_and_values():
    metrics = compute_metrics(parse_trace(trace_of("lossless")))
    assert parse_metrics(format_metrics(metrics)) == metrics
    assert metrics["messages_committed"] == metrics["messages_submitted"] == "500"
    assert metrics["control_messages"] == metrics["token_periods"]
    assert metrics["explicit_requests"] == "0" and metrics["reformations"] == "0"
