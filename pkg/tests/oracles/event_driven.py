"""Reference model of the original one-message-per-acknowledgement token ring.

Event driven: whoever holds the token acknowledges the earliest eligible
unacknowledged message it has heard, one message per acknowledgement, and
that acknowledgement hands the token to the next ring member.  A member holds
the token from the moment the handoff reaches it.  Lossless only.

Written without the package so it can serve as an independent check of the
periodic batched protocol.  Delays are integer microseconds.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field


@dataclass
class Member:
    name: str
    heard: dict = field(default_factory=dict)  # (source, seq) -> arrival instant
    log: list = field(default_factory=list)    # acknowledged labels in order
    has_token: bool = False


def run_ring(ring: list[str], source_delay: dict[str, int], member_delay: int,
             submissions: list[tuple[int, str]]) -> dict[str, list[tuple[str, int]]]:
    """Return every member's committed sequence.

    ``submissions`` lists (instant, source) in submission order; a source's
    n-th entry becomes message (source, n).  A message from source s reaches
    every member ``source_delay[s]`` after submission; acknowledgements take
    ``member_delay`` between any two members.
    """
    members = {n: Member(n) for n in ring}
    events: list = []
    counter = 0

    def push(at, what, *args):
        nonlocal counter
        counter += 1
        heapq.heappush(events, (at, counter, what, args))

    seq_of: dict[str, int] = {}
    for at, src in submissions:
        seq_of[src] = seq_of.get(src, 0) + 1
        for name in ring:
            push(at + source_delay[src], "message", name, (src, seq_of[src]))
    members[ring[0]].has_token = True
    acked: set = set()

    def next_for(mem: Member):
        done = {}
        for src, seq in acked:
            done[src] = max(done.get(src, 0), seq)
        ready = [(t, lab) for lab, t in mem.heard.items()
                 if lab not in acked and lab[1] == done.get(lab[0], 0) + 1]
        return min(ready)[1] if ready else None

    while events:
        now = events[0][0]
        # apply everything that lands at this instant before the holder acts
        while events and events[0][0] == now:
            _, _, what, args = heapq.heappop(events)
            if what == "message":
                name, label = args
                members[name].heard.setdefault(label, now)
            elif what == "ack":
                name, label, handoff_to = args
                members[name].log.append(label)
                if name == handoff_to:
                    members[name].has_token = True
        holder = next((m for m in members.values() if m.has_token), None)
        if holder is None:
            continue
        label = next_for(holder)
        if label is None:
            continue
        acked.add(label)
        holder.has_token = False
        holder.log.append(label)
        successor = ring[(ring.index(holder.name) + 1) % len(ring)]
        if successor == holder.name:
            holder.has_token = True
            push(now, "tick", None)  # keep going at the same instant
        else:
            for other in ring:
                if other != holder.name:
                    push(now + member_delay, "ack", other, label, successor)
    return {n: m.log for n, m in members.items()}
