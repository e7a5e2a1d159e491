"""Trace parsing, invariant checks and metrics.

Everything here works from trace text alone, so a trace file written by one
run can be re-verified or re-measured later without the simulator.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .core import stability_watermarks
from .nack import wave_of
from .simnet import parse_us


class TraceError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"trace line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Record:
    at: int
    node: str
    kind: str
    fields: dict
    line: int

    def int(self, key: str) -> int:
        return int(self.fields[key])

    def list(self, key: str) -> list[str]:
        v = self.fields.get(key, "-")
        return [] if v == "-" else v.split(",")

    def describe(self) -> str:
        detail = " ".join(f"{k}={v}" for k, v in self.fields.items())
        return f"line {self.line}: {self.at / 1e6:.6f} {self.node} {self.kind} {detail}"


def parse_trace(text: str) -> list[Record]:
    out = []
    for no, raw in enumerate(text.splitlines(), 1):
        if not raw:
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise TraceError(no, f"expected 4 tab-separated columns, got {len(parts)}")
        try:
            at = parse_us(parts[0])
        except ValueError:
            raise TraceError(no, f"bad time {parts[0]!r}") from None
        fields = {}
        if parts[3]:
            for tok in parts[3].split(" "):
                k, sep, v = tok.partition("=")
                if not sep or not k:
                    raise TraceError(no, f"bad field {tok!r}")
                fields[k] = v
        out.append(Record(at, parts[1], parts[2], fields, no))
    if out and out[0].kind != "meta":
        raise TraceError(out[0].line, "trace must start with a meta record")
    return out


def _meta(records: list[Record]) -> dict:
    if not records or records[0].kind != "meta":
        raise TraceError(1, "missing meta record")
    return records[0].fields


@dataclass
class Epoch:
    number: int
    members: list[str]
    start: int
    site: str
    formed_at: int
    tau_t: int

    @property
    def base(self) -> int:
        if self.number == 0:
            return 0
        return self.formed_at + self.tau_t - self.start * self.tau_t

    def scheduled(self, t: int) -> int:
        return self.base + t * self.tau_t

    def site_of(self, t: int) -> str:
        m = len(self.members)
        return self.members[(self.members.index(self.site) + t - self.start) % m]


def epochs_of(records: list[Record]) -> dict[int, Epoch]:
    meta = _meta(records)
    tau_t = int(meta["tau_t"])
    primaries = meta["primaries"].split(",")
    out = {0: Epoch(0, primaries, 1, primaries[0], 0, tau_t)}
    for r in records:
        if r.kind == "reform_done":
            e = r.int("epoch")
            out[e] = Epoch(e, r.list("members"), r.int("start"), r.fields["site"], r.at, tau_t)
    return out


# -- checks ----------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    ok: bool
    checked: int = 0
    counterexample: str = ""
    skipped: bool = False

    def line(self) -> str:
        status = "skip" if self.skipped else ("pass" if self.ok else "FAIL")
        tail = f"  first counterexample: {self.counterexample}" if self.counterexample else ""
        return f"{status}  {self.name} ({self.checked} checked){tail}"


def _crash_index(records: list[Record]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        if r.kind == "crash":
            out[r.node].append(i)
    return out


def check_total_order(records: list[Record]) -> CheckResult:
    crashes = _crash_index(records)
    owner: dict[int, tuple[str, Record]] = {}
    res = CheckResult("total_order", True)
    for i, r in enumerate(records):
        if r.kind != "commit":
            continue
        if any(c > i for c in crashes.get(r.node, ())):
            continue  # the node later crashes; its unreplicated tail may be reassigned
        base = r.int("base")
        for off, label in enumerate(r.list("labels")):
            g = base + off
            res.checked += 1
            prev = owner.get(g)
            if prev is None:
                owner[g] = (label, r)
            elif prev[0] != label:
                res.ok = False
                res.counterexample = (f"global {g}: {label} at {r.describe()} but {prev[0]} "
                                      f"at {prev[1].describe()}")
                return res
    return res


class _Progress:
    """Per-node committed-through token, replayed in trace order."""

    def __init__(self) -> None:
        self.through: dict[str, int] = defaultdict(int)
        self.dead: set[str] = set()

    def feed(self, r: Record) -> None:
        if r.kind == "commit":
            self.through[r.node] = max(self.through[r.node], r.int("t"))
        elif r.kind == "crash":
            self.dead.add(r.node)
        elif r.kind == "recover":
            self.dead.discard(r.node)
            self.through[r.node] = 0


def check_knowledge_chain(records: list[Record]) -> tuple[CheckResult, CheckResult]:
    """At each acknowledgement ``t``: the sender is complete through ``t-1``,
    the member ``j`` places behind is complete through ``t-j``, and every
    member holds everything through the stability watermark."""
    epochs = epochs_of(records)
    chain = CheckResult("knowledge_chain", True)
    marks = CheckResult("watermarks", True)
    prog = _Progress()
    for r in records:
        if r.kind == "ack_emit":
            t = r.int("t")
            ep = epochs.get(r.int("epoch"))
            if ep is None:
                continue
            members = ep.members
            m = len(members)
            chain.checked += 1
            if prog.through[r.node] < t - 1 and chain.ok:
                chain.ok = False
                chain.counterexample = f"{r.describe()}: sender complete only through {prog.through[r.node]}"
            idx = members.index(r.node)
            for j in range(1, m):
                if t - j < ep.start:
                    break
                behind = members[(idx - j) % m]
                if behind in prog.dead:
                    continue
                if prog.through[behind] < t - j and chain.ok:
                    chain.ok = False
                    chain.counterexample = (f"{r.describe()}: {behind} ({j} behind) complete only "
                                            f"through {prog.through[behind]}, needs {t - j}")
            all_have, _ = stability_watermarks(t, m)
            if all_have >= ep.start:
                marks.checked += 1
                for member in members:
                    # the sender commits its own batch as it emits (matters when m = 1)
                    through = max(prog.through[member], t if member == r.node else 0)
                    if member not in prog.dead and through < all_have and marks.ok:
                        marks.ok = False
                        marks.counterexample = (f"{r.describe()}: {member} lacks watermark {all_have} "
                                                f"(through {prog.through[member]})")
        prog.feed(r)
    return chain, marks


def check_single_acknowledger(records: list[Record]) -> CheckResult:
    holders: dict[str, set[str]] = defaultdict(set)  # epoch -> nodes holding the token
    node_epoch: dict[str, str] = {}
    res = CheckResult("single_acknowledger", True)
    for r in records:
        if r.kind == "accept":
            e = r.fields["epoch"]
            res.checked += 1
            others = holders[e] - {r.node}
            if others and res.ok:
                res.ok = False
                res.counterexample = f"{r.describe()} while {sorted(others)} hold the token"
            holders[e].add(r.node)
            node_epoch[r.node] = e
        elif r.kind in ("ack_emit", "drop_token", "crash", "recover"):
            e = node_epoch.pop(r.node, None)
            if e is not None:
                holders[e].discard(r.node)
    return res


def release_spreads(records: list[Record]) -> dict[tuple[int, int], tuple[int, int, int]]:
    """(epoch, token) -> (spread, earliest release, ack timestamp)."""
    times: dict[tuple[int, int], list[int]] = defaultdict(list)
    stamp: dict[tuple[int, int], int] = {}
    for r in records:
        if r.kind == "release":
            key = (r.int("epoch"), r.int("t"))
            times[key].append(r.at)
            stamp[key] = r.int("ts")
    return {k: (max(v) - min(v), min(v), stamp[k]) for k, v in times.items()}


def check_release_spread(records: list[Record]) -> CheckResult:
    meta = _meta(records)
    delta_a = int(meta["delta_a"])
    epochs = epochs_of(records)
    alarms = [r.at for r in records if r.kind in ("report", "reform_start")]
    arr = np.array(sorted(alarms), dtype=np.int64)
    res = CheckResult("release_spread", True)
    for (epoch, t), (spread, _, ts) in sorted(release_spreads(records).items()):
        res.checked += 1
        if spread == 0:
            continue
        ep = epochs.get(epoch)
        lo = ep.formed_at if ep else 0
        due = ts + delta_a
        excused = bool(arr.size) and bool(np.any((arr >= lo) & (arr <= due)))
        if not excused and res.ok:
            res.ok = False
            res.counterexample = (f"epoch {epoch} token {t}: release spread {spread}us "
                                  f"with no failure report by {due}us")
    return res


def token_periods(meta: dict) -> int:
    return int(meta["horizon"]) // int(meta["tau_t"])


def check_control_economy(records: list[Record]) -> CheckResult:
    meta = _meta(records)
    lossy = any(r.kind in ("loss", "crash", "reform_start") for r in records)
    res = CheckResult("control_economy", True)
    if lossy or float(meta.get("unicast_loss", "0")) > 0:
        res.skipped = True
        return res
    control = sum(1 for r in records if r.kind in ("ack_emit", "request", "retransmit", "report"))
    periods = token_periods(meta)
    res.checked = 1
    if control != periods:
        res.ok = False
        res.counterexample = f"{control} control messages over {periods} token periods"
    return res


def check_nack_bounds(records: list[Record]) -> CheckResult:
    """No receiver requests before its wave opens (lossy NACK-reduction runs)."""
    meta = _meta(records)
    res = CheckResult("nack_bounds", True)
    k_p = int(meta["k_p"])
    if meta["nack"] != "1":
        res.skipped = True
        return res
    epochs = epochs_of(records)
    slack = int(meta["delta_n"]) + 2 * int(meta["epsilon"])
    current = {}  # node -> epoch number
    for r in records:
        if r.kind == "ring":
            current[r.node] = r.int("epoch")
        if r.kind != "request" or r.node not in epochs[0].members:
            continue
        ep = epochs[current.get(r.node, 0)]
        if r.node not in ep.members:
            continue
        m = len(ep.members)
        pos = ep.members.index(r.node)
        for t in (int(x) for x in r.list("tokens")):
            if t < ep.start:
                continue
            res.checked += 1
            wave = wave_of(pos, ep.members.index(ep.site_of(t)), m, k_p)
            opens = ep.scheduled(t + wave) + slack if wave else 0
            if r.at < opens and res.ok:
                res.ok = False
                res.counterexample = f"{r.describe()}: wave {wave} for token {t} opens at {opens}us"
    return res


def check_repair_isolation(records: list[Record]) -> CheckResult:
    secondaries = {r.node for r in records if r.kind == "ring" and r.fields.get("role") == "secondary"}
    res = CheckResult("repair_isolation", True)
    for r in records:
        if r.kind == "request_recv" and r.fields["frm"] in secondaries:
            res.checked += 1
            if r.fields["holder"] == "1" and res.ok:
                res.ok = False
                res.counterexample = r.describe()
    return res


def check_secondary_soundness(records: list[Record]) -> CheckResult:
    meta = _meta(records)
    orders = {}
    for item in meta.get("sec_rings", "-").split(";"):
        if item and item != "-":
            name, _, members = item.partition(":")
            orders[name] = members.split("/")
    res = CheckResult("secondary_soundness", True)
    prog = _Progress()
    for r in records:
        if r.kind == "sec_pass":
            n = r.int("n")
            order = orders[r.fields["ring"]]
            idx = order.index(r.node)
            res.checked += 1
            for j in range(len(order)):
                behind = order[(idx - j) % len(order)]
                if n - j < 1 or behind in prog.dead:
                    continue
                if prog.through[behind] < n - j and res.ok:
                    res.ok = False
                    res.counterexample = (f"{r.describe()}: {behind} ({j} behind) through "
                                          f"{prog.through[behind]}, needs {n - j}")
        prog.feed(r)
    return res


def verify_records(records: list[Record]) -> list[CheckResult]:
    chain, marks = check_knowledge_chain(records)
    return [
        check_total_order(records),
        chain,
        marks,
        check_single_acknowledger(records),
        check_release_spread(records),
        check_control_economy(records),
        check_nack_bounds(records),
        check_repair_isolation(records),
        check_secondary_soundness(records),
    ]


def verify_text(text: str) -> list[CheckResult]:
    return verify_records(parse_trace(text))


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.ok for r in results)


def format_report(results: list[CheckResult]) -> str:
    return "".join(r.line() + "\n" for r in results)


# -- metrics ---------------------------------------------------------------------

def compute_metrics(records: list[Record]) -> dict[str, str]:
    meta = _meta(records)
    count: dict[str, int] = defaultdict(int)
    for r in records:
        count[r.kind] += 1
    submitted: dict[str, int] = {}
    for r in records:
        if r.kind == "submit":
            submitted.setdefault(f"{r.fields['src']}:{r.fields['seq']}", r.at)
    label_at: dict[tuple[int, int], str] = {}  # (epoch-independent) global seq -> label
    committed: set[str] = set()
    crashes = _crash_index(records)
    for i, r in enumerate(records):
        if r.kind == "commit":
            labels = r.list("labels")
            committed.update(labels)
            if any(c > i for c in crashes.get(r.node, ())):
                continue
            base = r.int("base")
            for off, label in enumerate(labels):
                label_at[base + off] = label
    latencies = []
    for r in records:
        if r.kind == "release":
            base, k = r.int("base"), r.int("k")
            for g in range(base, base + k):
                sub = submitted.get(label_at.get(g, ""))
                if sub is not None:
                    latencies.append(r.at - sub)
    lat = np.array(latencies, dtype=np.int64)
    spreads = release_spreads(records)
    spread_vals = [v[0] for v in spreads.values()]
    horizon = int(meta["horizon"])
    tau_t = int(meta["tau_t"])
    stalled = sum(1 for label, at in submitted.items()
                  if label not in committed and at < horizon - 3 * tau_t)
    total_failure = count["total_failure"] > 0
    request_items = sum(len(r.list("acks")) + len(r.list("labels")) for r in records if r.kind == "request")
    duplicate = sum(r.int("retry") for r in records if r.kind == "request")
    out = {
        "seed": meta["seed"],
        "horizon_us": meta["horizon"],
        "token_periods": token_periods(meta),
        "acks_emitted": count["ack_emit"],
        "control_messages": count["ack_emit"] + count["request"] + count["retransmit"] + count["report"],
        "explicit_requests": count["request"],
        "request_items": request_items,
        "duplicate_requests": duplicate,
        "retransmissions": count["retransmit"],
        "suppressed_requests": sum(r.int("n") for r in records if r.kind == "suppressed"),
        "source_resends": count["resend"],
        "losses_injected": count["loss"],
        "failure_reports": count["report"],
        "reformations": count["reform_done"],
        "reformation_failures": count["reform_fail"],
        "total_failure": int(total_failure),
        "messages_submitted": len(submitted),
        "messages_committed": len(committed & set(submitted)),
        "messages_stalled": stalled,
        "livelock": int(stalled > 0 and not total_failure),
        "orders_rejected": count["reject"],
        "batches_released": len(spreads),
        "releases": count["release"],
        "late_releases": sum(1 for r in records if r.kind == "release" and r.fields["late"] == "1"),
        "batches_with_spread": sum(1 for v in spread_vals if v > 0),
        "max_release_spread_us": max(spread_vals, default=0),
        "latency_count": int(lat.size),
        "latency_mean_us": int(round(float(lat.mean()))) if lat.size else 0,
        "latency_p50_us": int(np.percentile(lat, 50)) if lat.size else 0,
        "latency_p95_us": int(np.percentile(lat, 95)) if lat.size else 0,
        "latency_max_us": int(lat.max()) if lat.size else 0,
        "secondary_passes": count["sec_pass"],
        "customer_deliveries": count["deliver"],
        "customer_repairs": count["repair_req"],
        "customer_fallbacks": count["fallback"],
        "tentative_trades": count["tentative"],
        "confirmed_trades": count["confirm"],
        "crashes": count["crash"],
    }
    for key in ("stripes", "stripe_max_rate", "layer_size"):
        if key in meta:
            out[key] = meta[key]
    return {k: str(v) for k, v in out.items()}


def format_metrics(metrics: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in metrics.items())


def parse_metrics(text: str) -> dict[str, str]:
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        k, sep, v = line.partition(" = ")
        if not sep:
            raise ValueError(f"metrics line {no}: expected 'key = value'")
        out[k] = v
    return out
