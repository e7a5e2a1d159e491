"""Ring layout around the core token ring: secondary rings, repair servers,
customer regions and striping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

from .core import ReceiverState, stability_watermarks

Grade = Literal["best_effort", "guaranteed"]
GRADES = ("best_effort", "guaranteed")


def layer_size(l1: int, i: int) -> int:
    """Per-ring size so that ``i`` layers of rings cover ``l1`` receivers.

    The same number is the token passes needed to detect a failure or
    guarantee delivery with that layering.
    """
    if l1 < 1 or i < 1:
        raise ValueError("l1 and i must be positive")
    return round(l1 ** (1.0 / i))


passes_to_detect = layer_size


@dataclass
class SecondaryRing:
    name: str
    members: list[str]  # secondary receivers in ring order, then the bridge
    bridge: str
    assigned: list[str]  # primaries the secondaries request from, in preference order

    @property
    def order(self) -> list[str]:
        return [*self.members, self.bridge]


@dataclass
class Region:
    rt: str
    customers: dict[str, Grade] = field(default_factory=dict)
    fallback: str | None = None


@dataclass
class RingLayout:
    primaries: list[str]
    secondary_rings: list[SecondaryRing] = field(default_factory=list)
    repair_servers: dict[str, str | None] = field(default_factory=dict)
    regions: dict[str, Region] = field(default_factory=dict)

    @property
    def secondaries(self) -> list[str]:
        return [s for ring in self.secondary_rings for s in ring.members]

    @property
    def receivers(self) -> list[str]:
        return [*self.primaries, *self.secondaries]

    def ring_of(self, node: str) -> SecondaryRing | None:
        for ring in self.secondary_rings:
            if node in ring.members:
                return ring
        return None

    def validate(self) -> None:
        if not self.primaries:
            raise ValueError("ring layout needs at least one primary receiver")
        if len(set(self.primaries)) != len(self.primaries):
            raise ValueError("duplicate primary receiver ids")
        prim = set(self.primaries)
        seen: set[str] = set()
        for ring in self.secondary_rings:
            bridges = [x for x in ring.order if x in prim]
            if bridges != [ring.bridge]:
                raise ValueError(f"secondary ring {ring.name} must contain exactly one primary (its bridge)")
            if not ring.assigned or any(a not in prim for a in ring.assigned):
                raise ValueError(f"secondary ring {ring.name} must be assigned primary receivers")
            for s in ring.members:
                if s in seen or s in prim:
                    raise ValueError(f"secondary receiver {s} appears twice")
                seen.add(s)
        receivers = set(self.receivers)
        for rt, region in self.regions.items():
            if rt not in receivers:
                raise ValueError(f"region {rt} is not a receiver")
            for cust, grade in region.customers.items():
                if grade not in GRADES:
                    raise ValueError(f"customer {cust}: unknown grade {grade!r}")
            if region.customers and (region.fallback is None or region.fallback == rt):
                raise ValueError(f"region {rt}: customers need a second remulticast source")
            if region.fallback is not None and region.fallback not in receivers:
                raise ValueError(f"region {rt}: fallback {region.fallback} is not a receiver")


# -- secondary gating ---------------------------------------------------------

@dataclass(frozen=True)
class Pass:
    token_num: int


@dataclass(frozen=True)
class Hold:
    gaps: tuple


def secondary_gate(state: ReceiverState, sec_token_num: int) -> Pass | Hold:
    """A secondary may pass token ``n`` only once complete through primary token ``n``."""
    if state.complete_through(sec_token_num):
        return Pass(sec_token_num)
    acks, msgs = state.missing(upto=sec_token_num)
    return Hold((*acks, *msgs))


def assigned_primary(assigned: list[str], holder_of) -> str:
    """First assigned primary that is not (about to be) the token holder.

    ``holder_of`` answers whether a primary may hold the primary token while
    the request is in flight; secondaries never load the token site.
    """
    for rp in assigned:
        if not holder_of(rp):
            return rp
    raise LookupError("every assigned primary holds the token")


# -- edge repair ----------------------------------------------------------------

@dataclass(frozen=True)
class Remulticast:
    rt: str
    token_num: int
    base_global_seq: int
    records: tuple  # (global_seq, source, source_seq, payload)

    @property
    def end_global_seq(self) -> int:
        return self.base_global_seq + len(self.records)


@dataclass(frozen=True)
class RepairRequest:
    customer: str
    seqs: tuple[int, ...]


@dataclass(frozen=True)
class PermanentlyLost:
    seqs: tuple[int, ...]


@dataclass
class CustomerState:
    id: str
    grade: Grade
    next_seq: int = 1
    delivered: dict[int, tuple] = field(default_factory=dict)
    missing: set[int] = field(default_factory=set)
    lost_for_good: set[int] = field(default_factory=set)


def edge_repair(customer: CustomerState, packet: Remulticast) -> list[RepairRequest]:
    """Absorb one remulticast packet; guaranteed customers ask for the gaps."""
    for rec in packet.records:
        g = rec[0]
        customer.delivered.setdefault(g, rec)
        customer.missing.discard(g)
    if packet.base_global_seq > customer.next_seq:
        customer.missing.update(
            g for g in range(customer.next_seq, packet.base_global_seq) if g not in customer.delivered)
    customer.next_seq = max(customer.next_seq, packet.end_global_seq)
    if customer.grade != "guaranteed" or not customer.missing:
        return []
    return [RepairRequest(customer.id, tuple(sorted(customer.missing)))]


def absorb_repair(customer: CustomerState, reply) -> None:
    if isinstance(reply, PermanentlyLost):
        customer.missing.difference_update(reply.seqs)
        customer.lost_for_good.update(reply.seqs)
        return
    for rec in reply:
        customer.delivered.setdefault(rec[0], rec)
        customer.missing.discard(rec[0])


@dataclass
class RepairServer:
    """Retransmit server colocated with a remulticasting receiver."""

    rt: str
    m: int
    retained: dict[int, tuple] = field(default_factory=dict)
    token_of_seq: dict[int, int] = field(default_factory=dict)
    floor_token: int = 0

    def retain(self, packet: Remulticast) -> None:
        for rec in packet.records:
            self.retained[rec[0]] = rec
            self.token_of_seq[rec[0]] = packet.token_num
        all_have, _ = stability_watermarks(packet.token_num, self.m)
        floor = all_have - 2 * self.m
        if floor > self.floor_token:
            self.floor_token = floor
            for g in [g for g, t in self.token_of_seq.items() if t < floor]:
                del self.retained[g]
                del self.token_of_seq[g]

    def serve(self, request: RepairRequest) -> list:
        found = tuple(self.retained[g] for g in request.seqs if g in self.retained)
        gone = tuple(g for g in request.seqs if g not in self.retained)
        out: list = []
        if found:
            out.append(found)
        if gone:
            out.append(PermanentlyLost(gone))
        return out


# -- striping -------------------------------------------------------------------

@dataclass(frozen=True)
class Stripe:
    stripe_id: int
    address: str
    symbols: frozenset[str]
    aggregate_rate: float


@dataclass(frozen=True)
class StripeTable:
    stripes: tuple[Stripe, ...]
    budget: float

    def stripe_of(self, symbol: str) -> Stripe:
        for stripe in self.stripes:
            if symbol in stripe.symbols:
                return stripe
        raise KeyError(symbol)

    def validate(self) -> None:
        seen: set[str] = set()
        for stripe in self.stripes:
            if stripe.aggregate_rate > self.budget + 1e-9:
                raise ValueError(f"stripe {stripe.stripe_id} exceeds the budget")
            if seen & stripe.symbols:
                raise ValueError("a symbol is carried on two stripes")
            seen |= stripe.symbols


def assign_stripes(symbol_rates: dict[str, float], budget: float) -> StripeTable:
    """First-fit-decreasing packing of symbols into rate-bounded stripes."""
    for sym, rate in symbol_rates.items():
        if rate > budget:
            raise ValueError(f"symbol {sym} needs {rate}, more than the stripe budget {budget}")
        if rate < 0:
            raise ValueError(f"symbol {sym} has a negative rate")
    bins: list[list] = []  # [load, [symbols]]
    for sym, rate in sorted(symbol_rates.items(), key=lambda kv: (-kv[1], kv[0])):
        for b in bins:
            if b[0] + rate <= budget:
                b[0] += rate
                b[1].append(sym)
                break
        else:
            bins.append([rate, [sym]])
    stripes = tuple(
        Stripe(i, f"stripe-{i}", frozenset(syms), load) for i, (load, syms) in enumerate(bins))
    return StripeTable(stripes, budget)
