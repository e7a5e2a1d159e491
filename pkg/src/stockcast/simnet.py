"""Deterministic discrete-event network: multicast trees with correlated node
losses, unicast paths, timers, crashes and an append-only trace.

Simulated time is an integer number of microseconds so that every schedule is
exact and replays are byte-identical.
"""
from __future__ import annotations

import heapq
import random
from collections import Counter
from typing import Iterable

US = 1_000_000


def to_us(seconds: float) -> int:
    return round(seconds * US)


def fmt_us(us: int) -> str:
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // US}.{us % US:06d}"


def parse_us(text: str) -> int:
    sign = -1 if text.startswith("-") else 1
    whole, _, frac = text.lstrip("-").partition(".")
    return sign * (int(whole) * US + int((frac + "000000")[:6]))


class TopologyError(ValueError):
    pass


class Tree:
    """A multicast tree: ``parent`` maps each tree node to its parent (root -> None)."""

    def __init__(self, name: str, parent: dict[str, str | None], delay: dict[str, float],
                 loss: dict[str, float] | None = None) -> None:
        self.name = name
        self.parent = dict(parent)
        roots = [n for n, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise TopologyError(f"tree {name} must have exactly one root, found {roots}")
        self.root = roots[0]
        self.loss = {n: float(v) for n, v in (loss or {}).items()}
        for n, p in self.loss.items():
            if n not in self.parent:
                raise TopologyError(f"tree {name}: loss given for unknown node {n}")
            if not 0.0 <= p <= 1.0:
                raise TopologyError(f"tree {name}: loss for {n} must lie in [0, 1]")
        self.adj: dict[str, list[tuple[str, int]]] = {n: [] for n in self.parent}
        for n, p in self.parent.items():
            if p is None:
                continue
            if p not in self.parent:
                raise TopologyError(f"tree {name}: {n} hangs off unknown node {p}")
            d = delay.get(n, 0.0)
            if d < 0:
                raise TopologyError(f"tree {name}: negative delay on edge {n}-{p}")
            self.adj[n].append((p, to_us(d)))
            self.adj[p].append((n, to_us(d)))
        for n in self.adj:
            self.adj[n].sort()
        # connected + acyclic: a walk from the root reaches every node exactly once
        seen = {self.root}
        stack = [self.root]
        while stack:
            cur = stack.pop()
            for nbr, _ in self.adj[cur]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        if len(seen) != len(self.parent):
            raise TopologyError(f"tree {name} is not connected (cycle or detached nodes)")
        self._dist: dict[str, dict[str, int]] = {}
        self._plans: dict[tuple, list] = {}

    def __contains__(self, node: str) -> bool:
        return node in self.parent

    def leaves(self) -> list[str]:
        return sorted(n for n in self.parent if len(self.adj[n]) == 1 and n != self.root)

    def distances(self, src: str) -> dict[str, int]:
        cached = self._dist.get(src)
        if cached is None:
            cached = {src: 0}
            stack = [src]
            while stack:
                cur = stack.pop()
                for nbr, d in self.adj[cur]:
                    if nbr not in cached:
                        cached[nbr] = cached[cur] + d
                        stack.append(nbr)
            self._dist[src] = cached
        return cached

    def path_delay(self, a: str, b: str) -> int:
        return self.distances(a)[b]

    def subtree_leaves(self, node: str, sender: str) -> set[str]:
        """Leaves cut off from ``sender`` when ``node`` drops a message."""
        parent_of = {sender: None}
        order = [sender]
        for cur in order:
            for nbr, _ in self.adj[cur]:
                if nbr not in parent_of:
                    parent_of[nbr] = cur
                    order.append(nbr)
        below = {node}
        for cur in order:
            if parent_of.get(cur) in below:
                below.add(cur)
        return {n for n in below if len(self.adj[n]) == 1 and n != self.root}

    def plan(self, sender: str, members: frozenset) -> list[tuple]:
        """Pruned walk order from ``sender``: (node, parent index, cumulative delay, is member, loss)."""
        key = (sender, members)
        cached = self._plans.get(key)
        if cached is not None:
            return cached
        # iterative post-order to find which branches lead to members
        parent_of: dict[str, str | None] = {sender: None}
        order = [sender]
        for cur in order:
            for nbr, _ in self.adj[cur]:
                if nbr not in parent_of:
                    parent_of[nbr] = cur
                    order.append(nbr)
        useful = {n: (n in members and n != sender) for n in order}
        for cur in reversed(order):
            par = parent_of[cur]
            if par is not None and useful[cur]:
                useful[par] = True
        plan: list[tuple] = []
        index: dict[str, int] = {}
        cum: dict[str, int] = {sender: 0}

        def visit(node: str, par_idx: int) -> None:
            index[node] = len(plan)
            plan.append((node, par_idx, cum[node], node in members and node != sender,
                         self.loss.get(node, 0.0) if node != sender else 0.0))
            for nbr, d in self.adj[node]:
                if parent_of.get(nbr) == node and useful[nbr]:
                    cum[nbr] = cum[node] + d
                    visit(nbr, index[node])

        visit(sender, -1)
        self._plans[key] = plan
        return plan


class Trace:
    """Append-only list of (at, node, kind, fields) records.

    Rendered as one tab-separated line per record: time in seconds, node,
    kind and space-separated ``key=value`` fields (durations and timestamps
    inside fields are integer microseconds).
    """

    def __init__(self) -> None:
        self.records: list[tuple[int, str, str, dict]] = []

    def add(self, at: int, node: str, kind: str, **fields) -> None:
        self.records.append((at, node, kind, fields))

    def lines(self) -> Iterable[str]:
        for at, node, kind, fields in self.records:
            yield f"{fmt_us(at)}\t{node}\t{kind}\t{format_detail(fields)}"

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (list, tuple, set, frozenset)):
        return ",".join(_fmt_value(x) for x in v) or "-"
    s = str(v)
    if not s:
        return "-"
    if any(c in s for c in " \t\n="):
        raise ValueError(f"trace value {s!r} contains a separator")
    return s


def format_detail(fields: dict) -> str:
    return " ".join(f"{k}={_fmt_value(v)}" for k, v in fields.items())


_RANK = {"crash": 0, "recover": 0, "deliver": 1, "timer": 2}


class Node:
    """Base class for anything the event loop drives."""

    def __init__(self, node_id: str) -> None:
        self.id = node_id
        self.alive = True
        self.clock_offset = 0
        self.net: Network | None = None

    def local_now(self) -> int:
        return self.net.now + self.clock_offset

    def to_true(self, local_us: int) -> int:
        return local_us - self.clock_offset

    def on_message(self, msg, sender: str) -> None:  # pragma: no cover - interface
        pass

    def on_timer(self, tag: str, data) -> None:  # pragma: no cover - interface
        pass

    def on_crash(self) -> None:
        pass

    def on_recover(self) -> None:
        pass


class Network:
    def __init__(self, trees: dict[str, Tree], seed: int, unicast_loss: float = 0.0,
                 trace: Trace | None = None, unicast_delay: dict[tuple[str, str], float] | None = None) -> None:
        if not 0.0 <= unicast_loss <= 1.0:
            raise TopologyError("unicast loss must lie in [0, 1]")
        self.trees = trees
        self.seed = seed
        self.unicast_loss = unicast_loss
        self.unicast_override = {k: to_us(v) for k, v in (unicast_delay or {}).items()}
        self.trace = trace if trace is not None else Trace()
        self.now = 0
        self.nodes: dict[str, Node] = {}
        self.groups: dict[str, frozenset] = {}
        self.stats: Counter = Counter()
        self.halted: str | None = None
        self.record_losses = True
        # (at, rank, insertion seq, target, kind, payload, sender); at equal times
        # deliveries run before timers so a message arriving "by" an instant counts
        self._queue: list = []
        self._seq = 0
        self._rngs: dict[str, random.Random] = {}
        self._home: dict[str, list[str]] = {}
        for name, tree in trees.items():
            for n in tree.parent:
                self._home.setdefault(n, []).append(name)

    # -- randomness: one stream per tree node / unicast path, keyed by name
    def rng(self, key: str) -> random.Random:
        r = self._rngs.get(key)
        if r is None:
            r = self._rngs[key] = random.Random(f"{self.seed}/{key}")
        return r

    def add_node(self, node: Node) -> Node:
        if node.id in self.nodes:
            raise TopologyError(f"duplicate node id {node.id}")
        node.net = self
        self.nodes[node.id] = node
        return node

    def set_group(self, name: str, members: Iterable[str]) -> None:
        self.groups[name] = frozenset(members)

    def schedule(self, at: int, target: str, kind: str, payload=None, sender: str = "") -> None:
        if at < self.now:
            at = self.now
        self._seq += 1
        heapq.heappush(self._queue, (at, _RANK[kind], self._seq, target, kind, payload, sender))

    def timer(self, node_id: str, at: int, tag: str, data=None) -> None:
        self.schedule(at, node_id, "timer", (tag, data))

    def emit(self, node: str, kind: str, **fields) -> None:
        self.trace.add(self.now, node, kind, **fields)

    def multicast(self, tree_name: str, sender: str, group: str, msg) -> int:
        tree = self.trees[tree_name]
        plan = tree.plan(sender, self.groups[group])
        reached = [False] * len(plan)
        reached[0] = True
        delivered = 0
        self.stats["multicasts"] += 1
        for i in range(1, len(plan)):
            node, par, cum, member, loss = plan[i]
            if not reached[par]:
                continue
            if loss > 0.0 and self.rng(f"{tree_name}:{node}").random() < loss:
                self.stats["losses"] += 1
                if self.record_losses:
                    self.emit(node, "loss", tree=tree_name, sender=sender, msg=type(msg).__name__)
                continue
            reached[i] = True
            if member:
                self.schedule(self.now + cum, node, "deliver", msg, sender)
                delivered += 1
        self.stats["multicast_deliveries"] += delivered
        return delivered

    def common_tree(self, a: str, b: str) -> str:
        for name in self._home.get(a, ()):
            if b in self.trees[name]:
                return name
        raise TopologyError(f"no tree connects {a} and {b}")

    def unicast_delay(self, a: str, b: str) -> int:
        if (a, b) in self.unicast_override:
            return self.unicast_override[(a, b)]
        return self.trees[self.common_tree(a, b)].path_delay(a, b)

    def unicast(self, src: str, dst: str, msg) -> bool:
        self.stats["unicasts"] += 1
        if self.unicast_loss > 0.0 and self.rng(f"u:{src}>{dst}").random() < self.unicast_loss:
            self.stats["unicast_losses"] += 1
            return False
        self.schedule(self.now + self.unicast_delay(src, dst), dst, "deliver", msg, src)
        return True

    def halt(self, reason: str) -> None:
        self.halted = reason

    def run(self, until: int) -> None:
        q = self._queue
        nodes = self.nodes
        while q and self.halted is None:
            if q[0][0] > until:
                break
            at, _, _, target, kind, payload, sender = heapq.heappop(q)
            self.now = at
            node = nodes.get(target)
            if node is None:
                continue
            if kind == "deliver":
                if node.alive:
                    self.stats["deliveries"] += 1
                    node.on_message(payload, sender)
                else:
                    self.stats["dropped_dead"] += 1
            elif kind == "timer":
                if node.alive:
                    node.on_timer(*payload)
            elif kind == "crash":
                if node.alive:
                    node.alive = False
                    self.emit(target, "crash")
                    node.on_crash()
            elif kind == "recover":
                if not node.alive:
                    node.alive = True
                    self.emit(target, "recover")
                    node.on_recover()
        if self.halted is None:
            self.now = max(self.now, until)

    def pending(self) -> int:
        return len(self._queue)
