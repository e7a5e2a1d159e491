"""Per-node state machines of the token-ring reliable multicast protocol.

Every handler here is pure with respect to the network: an event goes in, the
node state is mutated, and a small effect value comes back telling the caller
what to do next.  The simulator in :mod:`stockcast.nodes` owns the I/O.

Conventions: token numbers and global sequence numbers both start at 1.
``ReceiverState.next_token`` is the next acknowledgement a receiver expects, so
a receiver is *complete through* token ``t`` exactly when ``next_token > t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

Label = tuple[str, int]

DEFAULT_K_CAP = 1024


class ProtocolError(Exception):
    """A handler was invoked in a state its contract forbids."""


@dataclass(frozen=True)
class SourceMessage:
    source: str
    source_seq: int
    payload: bytes = b""
    identity_tag: bytes = b""

    @property
    def label(self) -> Label:
        return (self.source, self.source_seq)


@dataclass(frozen=True)
class AckMessage:
    """Token-passing control message.

    One message acknowledges a batch of ``k`` source messages (entry ``j`` gets
    global sequence ``base_global_seq + j``), confirms the previous handoff and
    passes the token to ``next_site``.
    """

    token_num: int
    timestamp: int
    sender: str
    next_site: str
    base_global_seq: int
    acked: tuple[Label, ...] = ()
    epoch: int = 0

    @property
    def k(self) -> int:
        return len(self.acked)

    @property
    def end_global_seq(self) -> int:
        """One past the last global sequence this batch covers."""
        return self.base_global_seq + len(self.acked)

    def assignments(self):
        return zip(range(self.base_global_seq, self.end_global_seq), self.acked)


# -- effects -----------------------------------------------------------------

@dataclass(frozen=True)
class Duplicate:
    pass


@dataclass(frozen=True)
class Stored:
    pass


@dataclass(frozen=True)
class Rejected:
    reason: str = "identity"


@dataclass(frozen=True)
class Committed:
    seqs: tuple[int, ...]
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class NeedAck:
    first: int
    last: int | None = None  # None: everything from ``first`` forward


@dataclass(frozen=True)
class NeedMessage:
    labels: tuple[Label, ...]


@dataclass(frozen=True)
class TriggerReformation:
    reason: str


Effect = Union[Duplicate, Stored, Rejected, Committed, NeedAck, NeedMessage, TriggerReformation]


@dataclass(frozen=True)
class TokenAccepted:
    token_num: int


@dataclass(frozen=True)
class NeedRecovery:
    acks: tuple[int, ...]
    messages: tuple[Label, ...]
    source: str = ""

    @property
    def gaps(self) -> list:
        return [*self.acks, *self.messages]


# -- retransmission stimuli --------------------------------------------------

@dataclass(frozen=True)
class ExplicitRequest:
    requester: str
    acks: tuple[int, ...] = ()
    labels: tuple[Label, ...] = ()


@dataclass(frozen=True)
class DuplicateSourceMessage:
    message: SourceMessage


@dataclass(frozen=True)
class DuplicateTokenPass:
    ack: AckMessage


@dataclass(frozen=True)
class NotRetained:
    acks: tuple[int, ...] = ()
    labels: tuple[Label, ...] = ()


def accept_all(msg: SourceMessage) -> bool:
    return True


@dataclass
class ReceiverState:
    id: str
    ring: list[str]
    epoch: int = 0
    next_token: int = 1
    next_global: int = 1
    next_from_source: dict[str, int] = field(default_factory=dict)
    waiting_store: dict[Label, SourceMessage] = field(default_factory=dict)
    log: dict[int, SourceMessage] = field(default_factory=dict)
    acks_seen: dict[int, AckMessage] = field(default_factory=dict)
    holds_token: bool = False
    serving_retransmissions: bool = False
    pending_requests: dict = field(default_factory=dict)
    retain_from: int = 1
    epoch_starts: dict[int, int] = field(default_factory=lambda: {0: 1})
    accept_tag: Callable[[SourceMessage], bool] = accept_all
    # bookkeeping indexes
    arrival: dict[Label, tuple] = field(default_factory=dict)
    position_of: dict[Label, int] = field(default_factory=dict)
    token_of: dict[Label, int] = field(default_factory=dict)
    _arrivals: int = 0

    @property
    def m(self) -> int:
        return len(self.ring)

    @property
    def ring_pos(self) -> int:
        return self.ring.index(self.id) if self.id in self.ring else -1

    @property
    def next_site(self) -> str:
        return self.ring[(self.ring_pos + 1) % self.m]

    def complete_through(self, t: int) -> bool:
        return self.next_token > t

    def has_message(self, label: Label) -> bool:
        return label in self.waiting_store or label in self.position_of

    def message(self, label: Label) -> SourceMessage | None:
        msg = self.waiting_store.get(label)
        if msg is None and label in self.position_of:
            msg = self.log[self.position_of[label]]
        return msg

    def highest_ack(self) -> int:
        return max(self.acks_seen, default=0)

    def missing(self, upto: int | None = None) -> tuple[list[int], list[Label]]:
        """Gaps that block progress: absent acks in ``[next_token, upto]`` and
        absent messages named by acks already held."""
        if upto is None:
            upto = self.highest_ack()
        acks = [t for t in range(self.next_token, upto + 1) if t not in self.acks_seen]
        msgs: list[Label] = []
        for t in range(self.next_token, upto + 1):
            ack = self.acks_seen.get(t)
            if ack is None:
                continue
            for label in ack.acked:
                if not self.has_message(label):
                    msgs.append(label)
        return acks, msgs


def ack_valid(state: ReceiverState, ack: AckMessage) -> bool:
    """Whether ``ack`` belongs to the numbering this receiver follows.

    Each ring epoch owns the token numbers from its start up to the next
    epoch's start; older epochs' acknowledgements stay valid below that.
    """
    if ack.epoch > state.epoch:
        return False
    lo = state.epoch_starts.get(ack.epoch)
    if lo is None:
        return ack.epoch == state.epoch
    later = [s for e, s in state.epoch_starts.items() if e > ack.epoch]
    return lo <= ack.token_num < min(later, default=ack.token_num + 1)


def _store(state: ReceiverState, msg: SourceMessage, now) -> None:
    state.waiting_store[msg.label] = msg
    state._arrivals += 1
    key = now if now is not None else state._arrivals
    state.arrival[msg.label] = (key, msg.label)


def advance(state: ReceiverState) -> Committed | TriggerReformation | None:
    """Commit every held acknowledgement that is now complete, in token order.

    A batch commits atomically: either every message it names is present or
    nothing from it is placed in the log.
    """
    seqs: list[int] = []
    tokens: list[int] = []
    while True:
        ack = state.acks_seen.get(state.next_token)
        if ack is None:
            break
        if ack.base_global_seq != state.next_global:
            return TriggerReformation(
                f"token {ack.token_num} starts at global {ack.base_global_seq}, expected {state.next_global}")
        expected: dict[str, int] = {}
        ready = True
        for g, label in ack.assignments():
            if label in state.position_of:
                return TriggerReformation(f"{label} already committed at {state.position_of[label]}")
            if g in state.log:
                return TriggerReformation(f"global {g} already holds {state.log[g].label}")
            src, seq = label
            want = expected.get(src, state.next_from_source.get(src, 1))
            if seq != want:
                return TriggerReformation(f"token {ack.token_num} acknowledges {label} out of source order")
            expected[src] = seq + 1
            if label not in state.waiting_store:
                ready = False
        if not ready:
            break
        for g, label in ack.assignments():
            msg = state.waiting_store.pop(label)
            state.arrival.pop(label, None)
            state.log[g] = msg
            state.position_of[label] = g
            state.token_of[label] = ack.token_num
            state.next_from_source[label[0]] = label[1] + 1
            seqs.append(g)
        state.next_global = ack.end_global_seq
        tokens.append(ack.token_num)
        state.next_token += 1
    if tokens:
        return Committed(tuple(seqs), tuple(tokens))
    return None


def on_source_message(state: ReceiverState, msg: SourceMessage, now=None) -> Effect:
    """Receiver handling of a source message labelled (s, M_s).

    Below the next expected sequence for the source it is a duplicate; a new
    message is stored to wait for acknowledgement.  When its predecessor is
    neither acknowledged nor waiting, an acknowledgement must have been missed
    and every acknowledgement from ``next_token`` on is requested (the message
    is kept so it need not be fetched again).
    """
    if not state.accept_tag(msg):
        return Rejected()
    src, seq = msg.label
    nxt = state.next_from_source.get(src, 1)
    if seq < nxt or msg.label in state.waiting_store:
        return Duplicate()
    _store(state, msg, now)
    if seq == nxt or (src, seq - 1) in state.waiting_store:
        return Stored()
    return NeedAck(state.next_token, None)


def on_ack(state: ReceiverState, ack: AckMessage) -> Effect:
    if not ack_valid(state, ack) or ack.token_num < state.next_token:
        return Duplicate()
    held = state.acks_seen.get(ack.token_num)
    if held is not None and held != ack:
        return TriggerReformation(f"two different acknowledgements numbered {ack.token_num}")
    state.acks_seen[ack.token_num] = ack
    result = advance(state)
    if result is not None:
        return result
    acks, msgs = state.missing(upto=ack.token_num)
    if acks:
        return NeedAck(acks[0], acks[-1])
    if msgs:
        return NeedMessage(tuple(msgs))
    return Duplicate()


def drain_order(state: ReceiverState, k_cap: int = DEFAULT_K_CAP) -> list[Label]:
    """Labels the token site acknowledges next, at most ``k_cap`` of them.

    Arrival order at this node, ties by (source, seq); a message is only
    eligible once its predecessor from the same source is acknowledged or
    earlier in the same batch.
    """
    pending = sorted(state.waiting_store, key=state.arrival.__getitem__)
    expected = dict(state.next_from_source)
    chosen: list[Label] = []
    while pending and len(chosen) < k_cap:
        rest = []
        for label in pending:
            src, seq = label
            if len(chosen) < k_cap and seq == expected.get(src, 1):
                chosen.append(label)
                expected[src] = seq + 1
            else:
                rest.append(label)
        if len(rest) == len(pending):
            break
        pending = rest
    return chosen


def emit_ack(state: ReceiverState, now, k_cap: int = DEFAULT_K_CAP) -> AckMessage:
    if not state.holds_token:
        raise ProtocolError(f"{state.id} emits without holding the token")
    t = state.next_token
    ack = AckMessage(
        token_num=t,
        timestamp=now,
        sender=state.id,
        next_site=state.next_site,
        base_global_seq=state.next_global,
        acked=tuple(drain_order(state, k_cap)),
        epoch=state.epoch,
    )
    state.acks_seen[t] = ack
    result = advance(state)
    if not isinstance(result, Committed) or state.next_token != t + 1:
        raise ProtocolError(f"{state.id} could not commit its own token {t}: {result}")
    # the sender gives up acknowledging rights at once; it keeps serving
    # retransmissions until it sees the successor's acknowledgement
    state.holds_token = False
    state.serving_retransmissions = True
    return ack


def accept_token(state: ReceiverState, ack: AckMessage) -> TokenAccepted | NeedRecovery:
    if ack.next_site != state.id:
        raise ProtocolError(f"token {ack.token_num} is addressed to {ack.next_site}, not {state.id}")
    t = ack.token_num
    if ack_valid(state, ack) and t >= state.next_token and t not in state.acks_seen:
        state.acks_seen[t] = ack
        advance(state)
    if state.complete_through(t):
        state.holds_token = True
        state.serving_retransmissions = True
        return TokenAccepted(t)
    acks, msgs = state.missing(upto=t)
    return NeedRecovery(tuple(acks), tuple(msgs), ack.sender)


def serve_retransmission(state: ReceiverState, stimulus, *, assigned: bool = False) -> list:
    """Replies a retransmission server owes for one stimulus.

    Explicit requests get stored copies of the acknowledgements asked for
    (with the messages they cover) and of the messages asked for.  A duplicate
    source message that is already acknowledged means the source missed the
    acknowledgement, so the covering ack is returned.  A duplicate token pass
    means the predecessor missed our first acknowledgement.
    """
    if not (state.serving_retransmissions or assigned):
        raise ProtocolError(f"{state.id} is not serving retransmissions")
    if isinstance(stimulus, DuplicateSourceMessage):
        t = state.token_of.get(stimulus.message.label)
        return [state.acks_seen[t]] if t is not None else []
    if isinstance(stimulus, DuplicateTokenPass):
        mine = state.acks_seen.get(stimulus.ack.token_num + 1)
        return [mine] if mine is not None and mine.sender == state.id else []
    if not isinstance(stimulus, ExplicitRequest):
        raise TypeError(f"unknown stimulus {stimulus!r}")

    acks: list[AckMessage] = []
    labels: list[Label] = []
    old_acks: list[int] = []
    old_labels: list[Label] = []
    for t in stimulus.acks:
        if t < state.retain_from:
            old_acks.append(t)
            continue
        ack = state.acks_seen.get(t)
        if ack is not None:
            acks.append(ack)
            labels.extend(ack.acked)
    for label in stimulus.labels:
        t = state.token_of.get(label)
        if t is not None and t < state.retain_from:
            old_labels.append(label)
        else:
            labels.append(label)
    replies: list = list(acks)
    seen: set[Label] = set()
    for label in labels:
        if label in seen:
            continue
        seen.add(label)
        msg = state.message(label)
        if msg is not None:
            replies.append(msg)
    if old_acks or old_labels:
        replies.append(NotRetained(tuple(old_acks), tuple(old_labels)))
    return replies


def stability_watermarks(t: int, m: int) -> tuple[int, int]:
    """(all_have, common_knowledge) when token ``t`` is sent in a ring of ``m``.

    Every member holds everything acknowledged through ``t - m + 1``; every
    member knows that every member does through ``t - m + 2``.
    """
    if m < 1:
        raise ValueError("ring size must be at least 1")
    all_have = t - m + 1
    common = t - m + 2
    return (all_have if all_have >= 1 else 0, common if common >= 1 else 0)


# -- sources -----------------------------------------------------------------

@dataclass
class PendingSend:
    message: SourceMessage
    attempts: int = 0
    next_retry: int | None = None
    give_up_at: int | None = None


@dataclass
class SourceState:
    id: str
    next_seq: int = 1
    unacked: dict[int, PendingSend] = field(default_factory=dict)
    acked: dict[int, int] = field(default_factory=dict)  # source_seq -> token
    sent: dict[int, SourceMessage] = field(default_factory=dict)
    identity_tag: bytes = b""


def source_submit(state: SourceState, payload: bytes, *, next_retry=None, give_up_at=None) -> SourceMessage:
    msg = SourceMessage(state.id, state.next_seq, payload, state.identity_tag)
    state.next_seq += 1
    state.unacked[msg.source_seq] = PendingSend(msg, 0, next_retry, give_up_at)
    state.sent[msg.source_seq] = msg
    return msg


def source_on_ack(state: SourceState, ack: AckMessage) -> list[int]:
    """Mark this source's messages covered by ``ack``; returns newly acked seqs."""
    newly = []
    for src, seq in ack.acked:
        if src == state.id and seq in state.unacked:
            del state.unacked[seq]
            state.acked[seq] = ack.token_num
            newly.append(seq)
    return newly


def source_unack_from(state: SourceState, start_token: int) -> list[int]:
    """Forget acknowledgements numbered ``start_token`` or later.

    Used after reformation restarts numbering at ``start_token``: acks the
    source saw at or above it were never committed by any survivor.
    """
    redo = sorted(seq for seq, t in state.acked.items() if t >= start_token)
    for seq in redo:
        del state.acked[seq]
        state.unacked[seq] = PendingSend(state.sent[seq])
    return redo
