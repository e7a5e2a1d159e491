"""Event handlers that put the pure protocol state machines on the simulated
network: sources, ring receivers (primary and secondary), reformation
servers, edge customers and a fault injector."""
from __future__ import annotations

from dataclasses import dataclass, field

from .apps import FloorState, Order, arbiter_on_token, confirm_trades, gate_order
from .apps import Rejected as OrderRejected
from .core import (
    DEFAULT_K_CAP, AckMessage, Committed, Duplicate, DuplicateSourceMessage, DuplicateTokenPass,
    ExplicitRequest, NotRetained, ReceiverState, Rejected, SourceMessage, SourceState,
    TokenAccepted, TriggerReformation, accept_token, ack_valid, advance, emit_ack, on_ack,
    on_source_message, serve_retransmission, source_on_ack, source_submit, source_unack_from,
)
from .layering import (
    CustomerState, PermanentlyLost, Remulticast, RepairRequest, RepairServer, RingLayout,
    absorb_repair, edge_repair,
)
from .nack import suppress_on_overheard, wave_of
from .reformation import (
    FailureReport, NewRing, ReformationFailed, ReformationServerState, XrFailover, begin,
    record_join, run_reformation,
)
from .simnet import Node


# -- wire messages that only exist between nodes ---------------------------------

@dataclass(frozen=True)
class Retransmission:
    items: tuple


@dataclass(frozen=True)
class SecToken:
    ring: str
    token_num: int


@dataclass(frozen=True)
class ReportAck:
    epoch: int


@dataclass(frozen=True)
class Invite:
    epoch: int
    server: str


@dataclass(frozen=True)
class Join:
    member: str
    next_token: int
    epoch: int


@dataclass(frozen=True)
class RingAnnounce:
    ring: NewRing
    formed_at: int


@dataclass(frozen=True)
class Subscribe:
    customer: str
    region: str


def label_text(label) -> str:
    return f"{label[0]}:{label[1]}"


@dataclass
class SimConfig:
    """Run-wide constants, all durations in integer microseconds."""

    delta_n: int
    k_r: int
    tau_r: int
    tau_t: int
    delta_a: int
    layout: RingLayout
    servers: list[str]
    sources: list[str]
    epsilon: int = 0
    k_cap: int = DEFAULT_K_CAP
    k_p: int = 1
    nack: bool = False
    policy: str = "ticker"
    app: str = "ticker"
    price_rule: str = "SellerPrice"
    accounts: dict = field(default_factory=dict)
    customers: dict = field(default_factory=dict)  # customer -> (rt, fallback, grade)

    @property
    def slack(self) -> int:
        return self.delta_n + 2 * self.epsilon


class Schedule:
    """Token timetable of one ring epoch: token ``t`` is due at ``base + t*tau_t``."""

    def __init__(self, ring: list[str], tau_t: int, base: int = 0, start: int = 1, site_idx: int = 0):
        self.ring = list(ring)
        self.tau_t = tau_t
        self.base = base
        self.start = start
        self.site_idx = site_idx

    def scheduled(self, t: int) -> int:
        return self.base + t * self.tau_t

    def current(self, now: int) -> int:
        """Latest token number whose scheduled time has passed."""
        if self.tau_t <= 0:
            return self.start
        return (now - self.base) // self.tau_t

    def site(self, t: int) -> str:
        return self.ring[(self.site_idx + t - self.start) % len(self.ring)]

    def position(self, node: str) -> int:
        return self.ring.index(node)


class Reporter:
    """Failure reporting with positive acknowledgement and server failover."""

    def _init_reporter(self) -> None:
        self.reported = False
        self._report: FailureReport | None = None
        self._cursor: XrFailover | None = None
        self._report_gen = 0

    def report(self, reason: str, evidence, epoch: int) -> None:
        if self.reported:
            return
        self.reported = True
        self._report = FailureReport(self.id, reason, evidence, epoch)
        self._cursor = XrFailover(self.cfg.servers, self.cfg.k_r)
        ev = label_text(evidence) if isinstance(evidence, tuple) else evidence
        self.net.emit(self.id, "report", reason=reason, evidence=ev, epoch=epoch)
        self._send_report()

    def _send_report(self) -> None:
        self._report_gen += 1
        self.net.unicast(self.id, self._cursor.target, self._report)
        self.net.timer(self.id, self.net.now + self.cfg.tau_r, "report_to", self._report_gen)

    def _report_timeout(self, gen: int) -> None:
        if self._report is None or gen != self._report_gen:
            return
        if self._cursor.on_timeout() is None:
            self.net.emit(self.id, "total_failure", reason="no_reformation_server")
            self.net.halt("total_failure")
            return
        self._send_report()

    def _report_acked(self) -> None:
        self._report = None


# -- sources ----------------------------------------------------------------------

class SourceNode(Node, Reporter):
    def __init__(self, node_id: str, cfg: SimConfig, workload: list[tuple[int, bytes]]) -> None:
        super().__init__(node_id)
        self.cfg = cfg
        self.state = SourceState(node_id)
        self.workload = sorted(workload, key=lambda w: w[0])
        self.cursor = 0
        self.sched = Schedule(cfg.layout.primaries, cfg.tau_t)
        self.epoch = 0
        self.timers: dict[int, int] = {}  # seq -> generation
        self._init_reporter()

    def start(self) -> None:
        if self.workload:
            self.net.timer(self.id, self.workload[0][0], "submit")

    def _ack_due(self, now: int) -> int:
        """When an acknowledgement for a message sent ``now`` should be back."""
        cfg = self.cfg
        arrive = now + cfg.slack
        t = max(self.sched.start, -(-(arrive - self.sched.base) // self.sched.tau_t))
        return self.sched.scheduled(t) + cfg.slack

    def _arm(self, seq: int, first_due: int) -> None:
        pend = self.state.unacked[seq]
        pend.attempts = 0
        pend.next_retry = first_due
        pend.give_up_at = first_due + self.cfg.tau_t + self.cfg.k_r * self.cfg.tau_r
        gen = self.timers.get(seq, 0) + 1
        self.timers[seq] = gen
        self.net.timer(self.id, first_due, "retry", (seq, gen))

    def on_timer(self, tag: str, data) -> None:
        if tag == "submit":
            self._submit()
        elif tag == "retry":
            self._retry(*data)
        elif tag == "report_to":
            self._report_timeout(data)

    def _submit(self) -> None:
        now = self.net.now
        while self.cursor < len(self.workload) and self.workload[self.cursor][0] <= now:
            payload = self.workload[self.cursor][1]
            self.cursor += 1
            if self.cfg.app in ("orders", "floor"):
                verdict = gate_order(self.id, Order.decode(payload), self.cfg.accounts)
                if isinstance(verdict, OrderRejected):
                    self.net.emit(self.id, "reject", reason=verdict.reason)
                    continue
            msg = source_submit(self.state, payload)
            self.net.emit(self.id, "submit", src=self.id, seq=msg.source_seq)
            self.net.multicast("global", self.id, "rt", msg)
            self._arm(msg.source_seq, self._ack_due(now))
        if self.cursor < len(self.workload):
            self.net.timer(self.id, self.workload[self.cursor][0], "submit")

    def _retry(self, seq: int, gen: int) -> None:
        if self.timers.get(seq) != gen or seq not in self.state.unacked:
            return
        pend = self.state.unacked[seq]
        now = self.net.now
        if now >= pend.give_up_at:
            self.report("SourceAckTimeout", (self.id, seq), self.epoch)
            return
        if pend.attempts < self.cfg.k_r:
            pend.attempts += 1
            self.net.emit(self.id, "resend", src=self.id, seq=seq)
            self.net.multicast("global", self.id, "rt", pend.message)
            nxt = min(now + self.cfg.tau_r, pend.give_up_at)
        else:
            nxt = pend.give_up_at
        self.net.timer(self.id, nxt, "retry", (seq, gen))

    def _ack_counts(self, ack: AckMessage) -> bool:
        if ack.epoch == self.epoch:
            return ack.token_num >= self.sched.start or self.epoch == 0
        return ack.epoch < self.epoch and ack.token_num < self.sched.start

    def on_message(self, msg, sender: str) -> None:
        if isinstance(msg, AckMessage):
            if self._ack_counts(msg):
                source_on_ack(self.state, msg)
        elif isinstance(msg, Retransmission):
            for item in msg.items:
                if isinstance(item, AckMessage) and self._ack_counts(item):
                    source_on_ack(self.state, item)
        elif isinstance(msg, ReportAck):
            self._report_acked()
        elif isinstance(msg, RingAnnounce):
            self._adopt(msg)

    def _adopt(self, ann: RingAnnounce) -> None:
        ring = ann.ring
        if ring.epoch <= self.epoch:
            return
        self.epoch = ring.epoch
        self.sched = Schedule(list(ring.members), self.cfg.tau_t,
                              ann.formed_at + self.cfg.tau_t - ring.start_token * self.cfg.tau_t,
                              ring.start_token, list(ring.members).index(ring.token_site))
        source_unack_from(self.state, ring.start_token)
        self.reported = False
        self._report = None
        due = self._ack_due(self.net.now)
        for seq in sorted(self.state.unacked):
            self.net.multicast("global", self.id, "rt", self.state.unacked[seq].message)
            self._arm(seq, due)


# -- ring receivers ---------------------------------------------------------------

class ReceiverNode(Node, Reporter):
    def __init__(self, node_id: str, cfg: SimConfig, *, primary: bool) -> None:
        super().__init__(node_id)
        self.cfg = cfg
        self.primary = primary
        self.sec_ring = cfg.layout.ring_of(node_id)
        if self.sec_ring is None and primary:
            for ring in cfg.layout.secondary_rings:
                if ring.bridge == node_id:
                    self.sec_ring = ring
        self.region = cfg.layout.regions.get(node_id)
        self.fallback_for: dict[str, set[str]] = {}
        self._reset()

    def _reset(self) -> None:
        cfg = self.cfg
        self.state = ReceiverState(self.id, list(cfg.layout.primaries))
        self.sched = Schedule(cfg.layout.primaries, cfg.tau_t)
        self.frozen = False
        self.join_epoch: int | None = None
        self.donor: str | None = None
        self.pending: dict = {}  # key -> [attempts, next_at, token]
        self.flush_gen = 0
        self.flush_at: int | None = None
        self.to_accept: int | None = None
        self.last_emitted = 0
        self.handoff: list | None = None  # [token, attempts]
        self.release_ts: dict[int, int] = {}
        self.released: set[int] = set()
        self.overdue: set[int] = set()
        self.late_through = 0
        self.sec_holding: int | None = None
        self.floor = FloorState(cfg.price_rule) if (cfg.app == "floor" and self.primary) else None
        self.repair = RepairServer(self.id, len(cfg.layout.primaries)) if self.region else None
        self._init_reporter()

    # -- schedule helpers
    def _late_at(self, t: int) -> int:
        return self.sched.scheduled(t) + self.cfg.slack

    def _is_holder_window(self, rp: str) -> bool:
        c = self.sched.current(self.net.now)
        return rp in {self.sched.site(c), self.sched.site(c + 1), self.sched.site(c + 2)}

    def start(self) -> None:
        st = self.state
        self.net.emit(self.id, "ring", epoch=0, members=st.ring, start=1, site=st.ring[0],
                      role="primary" if self.primary else "secondary")
        if self.primary and st.ring[0] == self.id:
            st.holds_token = True
            self.net.emit(self.id, "accept", t=0, epoch=0)
            self._arm_emit(1)
        if self.sec_ring is not None and self.sec_ring.order[0] == self.id:
            self.sec_holding = 0
        self.net.timer(self.id, self._late_at(1), "late", (1, 0))

    # -- dispatch
    def on_message(self, msg, sender: str) -> None:
        if isinstance(msg, SourceMessage):
            self._on_source(msg, sender)
        elif isinstance(msg, AckMessage):
            self._on_ack(msg, sender, direct=True)
        elif isinstance(msg, Retransmission):
            self._on_retransmission(msg)
        elif isinstance(msg, ExplicitRequest):
            self._serve(msg, sender)
        elif isinstance(msg, SecToken):
            self.sec_holding = msg.token_num
            self._try_sec_pass()
        elif isinstance(msg, Invite):
            self._on_invite(msg)
        elif isinstance(msg, RingAnnounce):
            self._on_announce(msg)
        elif isinstance(msg, ReportAck):
            self._report_acked()
        elif isinstance(msg, RepairRequest):
            self._serve_repair(msg)
        elif isinstance(msg, Subscribe):
            subs = self.fallback_for.setdefault(msg.region, set())
            subs.add(msg.customer)
            self.net.set_group(f"fb:{msg.region}:{self.id}", subs)
            self.net.emit(self.id, "fallback_on", region=msg.region, customer=msg.customer)

    def on_timer(self, tag: str, data) -> None:
        if tag == "late":
            self._late(*data)
        elif tag == "flush":
            if data == self.flush_gen:
                self.flush_at = None
                self._flush()
        elif tag == "emit":
            self._emit(*data)
        elif tag == "handoff":
            self._handoff(*data)
        elif tag == "release":
            self._release_due(*data)
        elif tag == "report_to":
            self._report_timeout(data)

    def on_recover(self) -> None:
        # state is wiped; the node waits for the next reformation to rejoin
        self._reset()
        self.frozen = True

    # -- source messages
    def _on_source(self, msg: SourceMessage, sender: str, reply: bool = True) -> None:
        st = self.state
        eff = on_source_message(st, msg, self.net.now)
        if isinstance(eff, Rejected):
            self.net.emit(self.id, "reject", src=msg.source, seq=msg.source_seq)
            return
        if isinstance(eff, Duplicate):
            if (reply and sender == msg.source and st.serving_retransmissions and not self.frozen
                    and msg.label in st.token_of):
                for r in serve_retransmission(st, DuplicateSourceMessage(msg)):
                    self.net.emit(self.id, "retransmit", to=sender, n=1, what="source_ack")
                    self.net.unicast(self.id, sender, r)
            return
        if not self.frozen and st.next_token in st.acks_seen:
            self._absorb(advance(st))

    # -- acknowledgements
    def _on_ack(self, ack: AckMessage, sender: str, direct: bool) -> None:
        st = self.state
        if self.frozen or not ack_valid(st, ack):
            return
        t = ack.token_num
        if ack.epoch == st.epoch and self.last_emitted and t == self.last_emitted + 1:
            st.serving_retransmissions = False
            self.handoff = None
        if (self.primary and ack.next_site == self.id and t < st.next_token
                and direct and sender == ack.sender and self.last_emitted == t + 1):
            for r in serve_retransmission(st, DuplicateTokenPass(ack), assigned=True):
                self.net.emit(self.id, "retransmit", to=sender, n=1, what="token")
                self.net.unicast(self.id, sender, r)
            return
        fresh = t >= st.next_token and t not in st.acks_seen
        eff = on_ack(st, ack)
        if fresh and st.acks_seen.get(t) == ack:
            self._note_ack(ack)
        self._absorb(eff)
        if (self.primary and ack.next_site == self.id and ack.epoch == st.epoch
                and t >= self.sched.start and t > self.last_emitted and not st.holds_token):
            self.to_accept = t
            self._try_accept()
        self._scan_gaps()

    def _note_ack(self, ack: AckMessage) -> None:
        """First sighting of an acknowledgement: arm its release instant."""
        cfg = self.cfg
        t = ack.token_num
        self.release_ts[t] = ack.timestamp
        if cfg.delta_a <= 0:
            return
        due = ack.timestamp + cfg.delta_a - self.clock_offset
        if due < self.net.now:
            self.overdue.add(t)
            if ack.epoch == self.state.epoch:
                self.report("UnrecoverableGap", t, self.state.epoch)
        else:
            self.net.timer(self.id, due, "release", (t, ack.timestamp))

    def _absorb(self, eff) -> None:
        if isinstance(eff, Committed):
            self._on_committed(eff)
        elif isinstance(eff, TriggerReformation):
            self.net.emit(self.id, "corrupt", reason=eff.reason.replace(" ", "_"))
            self.report("UnrecoverableGap", self.state.next_token, self.state.epoch)

    def _on_committed(self, eff: Committed) -> None:
        st = self.state
        for t in eff.tokens:
            ack = st.acks_seen[t]
            self._record_commit(ack)
            if t in self.overdue:
                self._release(t, late=True)
            elif self.cfg.delta_a <= 0:
                self._release(t, late=False)
        self._try_accept()
        self._try_sec_pass()

    def _record_commit(self, ack: AckMessage) -> None:
        st = self.state
        self.net.emit(self.id, "commit", t=ack.token_num, epoch=ack.epoch, base=ack.base_global_seq,
                      k=ack.k, labels=[label_text(lb) for lb in ack.acked])
        if self.floor is not None:
            for g, label in ack.assignments():
                self.floor.on_commit(g, st.log[g])

    # -- token acceptance and emission
    def _try_accept(self) -> None:
        st = self.state
        t = self.to_accept
        if t is None or st.holds_token or self.frozen:
            return
        ack = st.acks_seen.get(t)
        if ack is not None and ack.next_site == self.id:
            result = accept_token(st, ack)
            if not isinstance(result, TokenAccepted):
                return
        elif st.complete_through(t):
            # restart after reformation: the appointed site takes the token directly
            st.holds_token = True
            st.serving_retransmissions = True
        else:
            return
        self.to_accept = None
        self.net.emit(self.id, "accept", t=t, epoch=st.epoch)
        self._arm_emit(t + 1)

    def _arm_emit(self, t: int) -> None:
        at = max(self.net.now, self.sched.scheduled(t) - self.clock_offset)
        self.net.timer(self.id, at, "emit", (t, self.state.epoch))

    def _emit(self, t: int, epoch: int) -> None:
        st = self.state
        if self.frozen or epoch != st.epoch or not st.holds_token or st.next_token != t:
            return
        ack = emit_ack(st, self.local_now(), self.cfg.k_cap)
        self.net.emit(self.id, "ack_emit", t=t, epoch=st.epoch, k=ack.k, base=ack.base_global_seq,
                      next=ack.next_site, ts=ack.timestamp)
        self.net.multicast("global", self.id, "all", ack)
        self._record_commit(ack)
        self.last_emitted = t
        self.handoff = [t, 0]
        check = max(self.sched.scheduled(t + 1), self.net.now) + self.cfg.slack
        self.net.timer(self.id, check, "handoff", (t, st.epoch))
        self._note_ack(ack)
        if self.cfg.delta_a <= 0:
            self._release(t, late=False)
        if ack.next_site == self.id:
            # a ring of one passes the token to itself
            self.to_accept = t
            self._try_accept()
        if self.floor is not None:
            for tr in confirm_trades(self.floor, t, st.m):
                self.net.emit(self.id, "confirm", **_trade_fields(tr))
            for tr in arbiter_on_token(self.floor, ack):
                self.net.emit(self.id, "tentative", **_trade_fields(tr))
        self._try_sec_pass()

    def _handoff(self, t: int, epoch: int) -> None:
        st = self.state
        if self.frozen or epoch != st.epoch or self.handoff is None or self.handoff[0] != t:
            return
        nxt = st.acks_seen.get(t + 1)
        if nxt is not None and nxt.epoch == st.epoch:
            self.handoff = None
            st.serving_retransmissions = False
            return
        self.handoff[1] += 1
        if self.handoff[1] > self.cfg.k_r:
            self.handoff = None
            self.report("TokenNotPassed", t + 1, st.epoch)
            return
        mine = st.acks_seen[t]
        self.net.emit(self.id, "retransmit", to=mine.next_site, n=1, what="token")
        self.net.unicast(self.id, mine.next_site, mine)
        self.net.timer(self.id, self.net.now + self.cfg.tau_r, "handoff", (t, epoch))

    # -- release
    def _release_due(self, t: int, ts: int) -> None:
        st = self.state
        if self.release_ts.get(t) != ts or t in self.released:
            return
        if st.complete_through(t) and st.acks_seen.get(t) is not None and st.acks_seen[t].timestamp == ts:
            self._release(t, late=False)
            return
        self.overdue.add(t)
        ack = st.acks_seen.get(t)
        if not self.frozen and ack is not None and ack.epoch == st.epoch:
            self.report("UnrecoverableGap", t, st.epoch)

    def _release(self, t: int, late: bool) -> None:
        if t in self.released:
            return
        self.released.add(t)
        self.overdue.discard(t)
        st = self.state
        ack = st.acks_seen[t]
        self.net.emit(self.id, "release", t=t, epoch=ack.epoch, k=ack.k, base=ack.base_global_seq,
                      ts=ack.timestamp, late=late)
        if self.region is None and not self.fallback_for:
            return
        records = tuple((g, st.log[g].source, st.log[g].source_seq, st.log[g].payload)
                        for g in range(ack.base_global_seq, ack.end_global_seq))
        packet = Remulticast(self.id, t, ack.base_global_seq, records)
        if self.region is not None:
            self.repair.retain(packet)
            self.net.multicast(f"region:{self.id}", self.id, f"region:{self.id}", packet)
        for region in self.fallback_for:
            self.net.multicast(f"region:{region}", self.id, f"fb:{region}:{self.id}", packet)

    def _serve_repair(self, req: RepairRequest) -> None:
        if self.repair is None:
            return
        for reply in self.repair.serve(req):
            n = len(reply.seqs) if isinstance(reply, PermanentlyLost) else len(reply)
            self.net.emit(self.id, "repair_serve", to=req.customer, n=n,
                          lost=isinstance(reply, PermanentlyLost))
            self.net.unicast(self.id, req.customer, reply)

    # -- gap detection and requests
    def _late(self, t: int, epoch: int) -> None:
        if epoch != self.state.epoch or self.frozen:
            return
        self.late_through = max(self.late_through, t)
        self._scan_gaps()
        self.net.timer(self.id, self._late_at(t + 1), "late", (t + 1, epoch))

    def _scan_gaps(self) -> None:
        st = self.state
        if self.frozen:
            return
        held = st.highest_ack()
        upto = max(held, self.late_through)
        for t in range(st.next_token, upto + 1):
            ack = st.acks_seen.get(t)
            if ack is None:
                self._want(t, t)
                continue
            for label in ack.acked:
                if not st.has_message(label):
                    self._want(label, t)

    def _eligible_at(self, token: int) -> int:
        now = self.net.now
        cfg = self.cfg
        if not (cfg.nack and self.primary and token >= self.sched.start):
            return now
        sched = self.sched
        wave = wave_of(sched.position(self.id), sched.position(sched.site(token)), len(sched.ring), cfg.k_p)
        if wave == 0:
            return now
        return max(now, self._late_at(token + wave))

    def _want(self, key, token: int) -> None:
        if key in self.pending:
            return
        at = self._eligible_at(token)
        self.pending[key] = [0, at, token]
        self._arm_flush(at)

    def _arm_flush(self, at: int) -> None:
        if self.flush_at is not None and self.flush_at <= at:
            return
        self.flush_gen += 1
        self.flush_at = at
        self.net.timer(self.id, at, "flush", self.flush_gen)

    def _satisfied(self, key) -> bool:
        st = self.state
        if isinstance(key, int):
            return key < st.next_token or key in st.acks_seen
        return st.has_message(key)

    def _target(self, token: int, attempts: int) -> str | None:
        sched = self.sched
        if not self.primary:
            ring = self.sec_ring
            options = [rp for rp in ring.assigned if not self._is_holder_window(rp)]
            return options[attempts % len(options)] if options else None
        if token < sched.start:
            options = [n for n in (self.donor, sched.site(sched.start)) if n and n != self.id]
        else:
            options = [n for n in (sched.site(token), sched.site(token + 1)) if n != self.id]
        return options[attempts % len(options)] if options else None

    def _flush(self) -> None:
        if self.frozen:
            return
        now = self.net.now
        cfg = self.cfg
        batches: dict[str, list] = {}
        for key, rec in list(self.pending.items()):
            if self._satisfied(key):
                del self.pending[key]
                continue
            attempts, next_at, token = rec
            if next_at > now:
                continue
            if attempts >= cfg.k_r:
                del self.pending[key]
                self.report("UnrecoverableGap", token, self.state.epoch)
                continue
            target = self._target(token, attempts)
            rec[1] = now + cfg.tau_r
            if target is None:
                continue
            batch = batches.setdefault(target, [[], [], 0, set()])
            batch[0 if isinstance(key, int) else 1].append(key)
            batch[2] += attempts > 0
            batch[3].add(token)
            rec[0] += 1
        for target, (acks, labels, retries, tokens) in batches.items():
            req = ExplicitRequest(self.id, tuple(acks), tuple(labels))
            self.net.emit(self.id, "request", to=target, acks=acks,
                          labels=[label_text(lb) for lb in labels], retry=retries, tokens=sorted(tokens))
            self.net.unicast(self.id, target, req)
        if self.pending:
            self._arm_flush(min(rec[1] for rec in self.pending.values()))

    def _serve(self, req: ExplicitRequest, sender: str) -> None:
        st = self.state
        self.net.emit(self.id, "request_recv", frm=req.requester, holder=st.holds_token,
                      n=len(req.acks) + len(req.labels))
        replies = [r for r in serve_retransmission(st, req, assigned=True) if not isinstance(r, NotRetained)]
        if not replies:
            return
        bundle = Retransmission(tuple(replies))
        if self.cfg.nack and req.requester in self.cfg.layout.primaries:
            self.net.emit(self.id, "retransmit", to="*", n=len(replies), what="multicast")
            self.net.multicast("global", self.id, "rp", bundle)
        else:
            self.net.emit(self.id, "retransmit", to=req.requester, n=len(replies), what="reply")
            self.net.unicast(self.id, req.requester, bundle)

    def _on_retransmission(self, bundle: Retransmission) -> None:
        before = {k for k, rec in self.pending.items() if rec[0] == 0}
        self.pending = suppress_on_overheard(self.pending, list(bundle.items))
        quiet = len(before - set(self.pending))
        if quiet and self.cfg.nack:
            self.net.emit(self.id, "suppressed", n=quiet)
        for item in bundle.items:
            if isinstance(item, SourceMessage):
                self._on_source(item, "", reply=False)
        for item in bundle.items:
            if isinstance(item, AckMessage):
                self._on_ack(item, "", direct=False)

    # -- secondary ring
    def _try_sec_pass(self) -> None:
        ring = self.sec_ring
        if ring is None or self.sec_holding is None:
            return
        n = self.sec_holding + 1
        if not self.state.complete_through(n):
            return
        order = ring.order
        nxt = order[(order.index(self.id) + 1) % len(order)]
        self.sec_holding = None
        self.net.emit(self.id, "sec_pass", n=n, ring=ring.name, to=nxt)
        self.net.unicast(self.id, nxt, SecToken(ring.name, n))

    # -- reformation
    def _on_invite(self, inv: Invite) -> None:
        st = self.state
        if inv.epoch <= st.epoch:
            return
        if self.join_epoch != inv.epoch:
            if st.holds_token:
                st.holds_token = False
                self.net.emit(self.id, "drop_token", epoch=st.epoch)
            self.frozen = True
            self.join_epoch = inv.epoch
            self.pending.clear()
            self.handoff = None
            self.to_accept = None
            self.net.emit(self.id, "freeze", epoch=inv.epoch, next_token=st.next_token)
        self.net.unicast(self.id, inv.server, Join(self.id, st.next_token, inv.epoch))

    def _on_announce(self, ann: RingAnnounce) -> None:
        ring = ann.ring
        st = self.state
        if ring.epoch <= st.epoch:
            return
        if self.id not in ring.members and self.id not in ring.secondaries:
            self.net.emit(self.id, "excluded", epoch=ring.epoch)
            return
        cfg = self.cfg
        start = ring.start_token
        st.epoch = ring.epoch
        st.epoch_starts[ring.epoch] = start
        st.ring = list(ring.members)
        for t in [t for t in st.acks_seen if t >= start and t >= st.next_token]:
            del st.acks_seen[t]
            self.release_ts.pop(t, None)
            self.overdue.discard(t)
        base = ann.formed_at + cfg.tau_t - start * cfg.tau_t
        self.sched = Schedule(st.ring, cfg.tau_t, base, start, st.ring.index(ring.token_site))
        self.donor = ring.donor
        self.frozen = False
        self.join_epoch = None
        self.reported = False
        self._report = None
        self.pending.clear()
        self.handoff = None
        self.to_accept = None
        self.late_through = start - 1
        st.serving_retransmissions = False
        self.net.emit(self.id, "ring", epoch=ring.epoch, members=st.ring, start=start,
                      site=ring.token_site, role="primary" if self.primary else "secondary")
        if self.primary and ring.token_site == self.id:
            self.to_accept = start - 1
            self._try_accept()
        self.net.timer(self.id, self._late_at(start), "late", (start, ring.epoch))
        self._scan_gaps()


def _trade_fields(tr) -> dict:
    return dict(buy=label_text(tr.buy_ref), sell=label_text(tr.sell_ref), sym=tr.symbol,
                price=tr.price, qty=tr.quantity, g=tr.global_seq, t=tr.tentative_at,
                confirmed=tr.confirmed_at if tr.confirmed_at is not None else "-")


# -- reformation server ---------------------------------------------------------

class ReformationNode(Node):
    def __init__(self, node_id: str, cfg: SimConfig, unicast_copies: int = 1) -> None:
        super().__init__(node_id)
        self.cfg = cfg
        self.server = ReformationServerState(node_id, cfg.layout)
        self.copies = unicast_copies
        self.form_gen = 0

    def on_message(self, msg, sender: str) -> None:
        if isinstance(msg, FailureReport):
            self.net.unicast(self.id, sender, ReportAck(msg.epoch))
            if begin(self.server, msg):
                ev = label_text(msg.evidence) if isinstance(msg.evidence, tuple) else msg.evidence
                self.net.emit(self.id, "reform_start", reason=msg.reason, reporter=msg.reporter,
                              evidence=ev, epoch=self.server.epoch + 1)
                self._invite()
        elif isinstance(msg, Join):
            if msg.epoch == self.server.epoch + 1:
                record_join(self.server, msg.member, msg.next_token)
        elif isinstance(msg, RingAnnounce):
            if msg.ring.epoch > self.server.epoch:
                self.server.epoch = msg.ring.epoch
                self.server.members = list(msg.ring.members)
                self.server.phase = "Done"

    def _invite(self) -> None:
        cfg = self.cfg
        inv = Invite(self.server.epoch + 1, self.id)
        for r in cfg.layout.receivers:
            for _ in range(self.copies):
                self.net.unicast(self.id, r, inv)
        self.form_gen += 1
        window = 2 * cfg.tau_r * (self.server.attempt + 1)
        self.net.timer(self.id, self.net.now + window, "form", self.form_gen)

    def on_timer(self, tag: str, data) -> None:
        if tag != "form" or data != self.form_gen:
            return
        try:
            ring = run_reformation(self.server, self.cfg.policy)
        except ReformationFailed as exc:
            self.net.emit(self.id, "reform_fail", attempt=self.server.attempt,
                          reason=str(exc).replace(" ", "_").replace(",", ""))
            if self.server.attempt > self.cfg.k_r:
                self.net.emit(self.id, "total_failure", reason="reformation_failed")
                self.net.halt("total_failure")
                return
            self._invite()
            return
        self.net.emit(self.id, "reform_done", epoch=ring.epoch, members=ring.members,
                      start=ring.start_token, site=ring.token_site, donor=ring.donor)
        ann = RingAnnounce(ring, self.net.now)
        cfg = self.cfg
        targets = [*cfg.layout.receivers, *cfg.sources, *(s for s in cfg.servers if s != self.id)]
        for n in targets:
            self.net.unicast(self.id, n, ann)


# -- edge customers ---------------------------------------------------------------

class CustomerNode(Node):
    def __init__(self, node_id: str, cfg: SimConfig, rt: str, fallback: str | None, grade: str) -> None:
        super().__init__(node_id)
        self.cfg = cfg
        self.rt = rt
        self.fallback = fallback
        self.cstate = CustomerState(node_id, grade)
        self.on_fallback = False
        self.last_heard = 0

    def start(self) -> None:
        self.net.timer(self.id, self.cfg.tau_t, "silence")

    def on_message(self, msg, sender: str) -> None:
        if isinstance(msg, Remulticast):
            if msg.rt == self.rt:
                self.last_heard = self.net.now
            self.net.emit(self.id, "deliver", t=msg.token_num, base=msg.base_global_seq,
                          k=len(msg.records), via=msg.rt)
            for req in edge_repair(self.cstate, msg):
                self.net.emit(self.id, "repair_req", to=msg.rt, n=len(req.seqs))
                self.net.unicast(self.id, msg.rt, req)
        elif isinstance(msg, PermanentlyLost):
            absorb_repair(self.cstate, msg)
            self.net.emit(self.id, "lost", seqs=msg.seqs)
        elif isinstance(msg, tuple):
            absorb_repair(self.cstate, msg)
            self.net.emit(self.id, "repaired", seqs=[rec[0] for rec in msg])

    def on_timer(self, tag: str, data) -> None:
        if tag != "silence":
            return
        if (not self.on_fallback and self.fallback is not None
                and self.net.now - self.last_heard > 2 * self.cfg.tau_t):
            self.on_fallback = True
            self.net.emit(self.id, "fallback", to=self.fallback)
            self.net.unicast(self.id, self.fallback, Subscribe(self.id, self.rt))
        self.net.timer(self.id, self.net.now + self.cfg.tau_t, "silence")


# -- fault injection ---------------------------------------------------------------

class FaultInjector(Node):
    """Crashes whichever primary holds (or is about to hold) the token at a given time."""

    def __init__(self, node_id: str, targets: list[str]) -> None:
        super().__init__(node_id)
        self.targets = targets

    def on_timer(self, tag: str, data) -> None:
        if tag != "crash_site":
            return
        nodes = [self.net.nodes[n] for n in self.targets]
        alive = [n for n in nodes if n.alive]
        holders = [n for n in alive if n.state.holds_token]
        if holders:
            victim = holders[0]
        else:
            # token in flight: the addressee of the newest acknowledgement
            newest = max(alive, key=lambda n: n.state.highest_ack(), default=None)
            if newest is None:
                return
            ack = newest.state.acks_seen.get(newest.state.highest_ack())
            victim = self.net.nodes[ack.next_site] if ack else newest
        self.net.emit(self.id, "fault", target=victim.id, what="crash_token_site")
        self.net.schedule(self.net.now, victim.id, "crash")
