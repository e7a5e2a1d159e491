"""Centralised ring reformation.

A failure report wakes a reformation server, which invites every known
receiver, collects each responder's next expected token, and appoints a new
ring, restart token and token site.  The event-driven parts (invitation
retries, the join window) live in :mod:`stockcast.nodes`; this module holds the
decisions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

from .layering import RingLayout

Reason = Literal["SourceAckTimeout", "TokenNotPassed", "UnrecoverableGap"]
REASONS = ("SourceAckTimeout", "TokenNotPassed", "UnrecoverableGap")
Policy = Literal["ticker", "conservative"]


class ReformationFailed(Exception):
    pass


class TotalFailure(Exception):
    """No reformation server acknowledged a failure report."""


@dataclass(frozen=True)
class FailureReport:
    reporter: str
    reason: str
    evidence: object
    epoch: int = 0

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown failure reason {self.reason!r}")
        if self.evidence is None:
            raise ValueError("failure reports carry evidence")


@dataclass(frozen=True)
class NewRing:
    epoch: int
    members: tuple[str, ...]
    start_token: int
    token_site: str
    donor: str  # responder holding everything below start_token
    secondaries: tuple[str, ...] = ()
    scopes: tuple = ()  # (region, primary R_T, fallback R_T)


@dataclass
class ReformationServerState:
    id: str
    known_layout: RingLayout
    epoch: int = 0
    collected: dict[str, int] = field(default_factory=dict)
    phase: str = "Idle"  # Idle | Inviting | Forming | Done
    attempt: int = 0
    members: list[str] = field(default_factory=list)


def begin(server: ReformationServerState, report: FailureReport) -> bool:
    """Start a reformation for ``report``; False if one is already in flight or the report is stale."""
    if server.phase not in ("Idle", "Done") or report.epoch < server.epoch:
        return False
    server.phase = "Inviting"
    server.collected = {}
    server.attempt = 0
    return True


def record_join(server: ReformationServerState, member: str, t_r: int) -> None:
    if server.phase not in ("Inviting", "Forming"):
        return
    server.collected[member] = t_r


def quorum(m_old: int) -> int:
    return math.ceil((m_old + 1) / 2)


def choose_ring(collected: dict[str, int], old_primaries: list[str], policy: Policy = "ticker",
                primaries: set[str] | None = None, min_responders: int = 2) -> tuple[list[str], int, str, str]:
    """(members, start_token, token_site, donor) from the join reports.

    The next unassigned token is the largest reported next-expected token.
    The site is the lowest-id primary reporting that maximum; if only a
    secondary heard the last acknowledgement, the best primary becomes the
    site and recovers from that secondary (the donor).
    """
    if primaries is None:
        primaries = set(old_primaries)
    members = [p for p in old_primaries if p in collected and p in primaries]
    members += sorted(p for p in collected if p in primaries and p not in old_primaries)
    if len(members) < min_responders:
        raise ReformationFailed(f"only {len(members)} primary responders")
    if policy == "conservative":
        survivors = sum(1 for p in old_primaries if p in collected)
        need = quorum(len(old_primaries))
        if survivors < need:
            raise ReformationFailed(f"{survivors} previous members responded, {need} required")
    start = max(collected.values())
    donor = min(n for n, t in collected.items() if t == start)
    best = max(collected[p] for p in members)
    site = min(p for p in members if collected[p] == best)
    if collected[site] == start:
        donor = site
    return members, start, site, donor


def run_reformation(server: ReformationServerState, policy: Policy = "ticker") -> NewRing:
    server.phase = "Forming"
    layout = server.known_layout
    try:
        members, start, site, donor = choose_ring(server.collected, server.members or layout.primaries,
                                                 policy, set(layout.primaries))
    except ReformationFailed:
        server.phase = "Inviting"
        server.attempt += 1
        raise
    server.epoch += 1
    alive = set(server.collected)
    scopes = reassign_scopes(layout, alive)
    secondaries = tuple(s for s in layout.secondaries if s in alive)
    server.members = list(members)
    server.phase = "Done"
    return NewRing(server.epoch, tuple(members), start, site, donor, secondaries, scopes)


def reassign_scopes(layout: RingLayout, alive: set[str]) -> tuple:
    """Region -> (primary, fallback) so each region keeps two live sources."""
    live = [r for r in layout.receivers if r in alive]
    out = []
    for rt, region in sorted(layout.regions.items()):
        chain = [c for c in (rt, region.fallback) if c is not None and c in alive]
        for r in live:
            if len(chain) >= 2:
                break
            if r not in chain:
                chain.append(r)
        out.append((rt, *chain[:2]))
    return tuple(out)


class XrFailover:
    """Walks the ordered reformation-server list, ``k_r`` tries per server."""

    def __init__(self, servers: list[str], k_r: int) -> None:
        if not servers:
            raise ValueError("at least one reformation server is required")
        self.servers = list(servers)
        self.k_r = max(1, k_r)
        self.index = 0
        self.tries = 0

    @property
    def target(self) -> str | None:
        return self.servers[self.index] if self.index < len(self.servers) else None

    def on_timeout(self) -> str | None:
        self.tries += 1
        if self.tries >= self.k_r:
            self.index += 1
            self.tries = 0
        return self.target


def failover_xr(servers: list[str], responds: Callable[[str], bool], k_r: int) -> tuple[str, int]:
    """(chosen server, attempts made).  Raises :class:`TotalFailure` when all are silent."""
    cursor = XrFailover(servers, k_r)
    attempts = 0
    while cursor.target is not None:
        attempts += 1
        if responds(cursor.target):
            return cursor.target, attempts
        cursor.on_timeout()
    raise TotalFailure(f"no reformation server answered after {attempts} attempts")
