"""Scenario files: a versioned, line-oriented ``[section]`` / ``key = value``
format, parsed into a :class:`Scenario` that can also be built in code.

The reader is hand-rolled rather than configparser because validation errors
must name the offending line, which configparser does not track.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .apps import PRICE_RULES, Account, Order
from .layering import GRADES, Region, RingLayout, SecondaryRing, assign_stripes, layer_size
from .simnet import Tree, TopologyError
from .timing import TimingParams

FORMAT_TAG = "stockcast-scenario 1"
APPS = ("ticker", "orders", "floor")


class ScenarioError(ValueError):
    def __init__(self, field_name: str, line: int | None, message: str) -> None:
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{field_name}: {message}")
        self.field = field_name
        self.line = line


@dataclass
class RegionSpec:
    fallback: str | None = None
    customers: dict[str, str] = field(default_factory=dict)
    edge_delay: float = 0.005
    edge_loss: float = 0.0


@dataclass
class Scenario:
    seed: int = 1
    horizon: float = 10.0
    app: str = "ticker"
    # timing
    delta_n: float = 0.01
    k_r: int = 2
    x: float = 0.0
    p: float = 0.001
    tau_r: float | None = None
    tau_t: float | None = None
    delta_a: float | None = None
    epsilon: float = 0.0
    # topology: node -> (parent or None, delay to parent, loss)
    tree: dict[str, tuple[str | None, float, float]] = field(default_factory=dict)
    unicast_loss: float = 0.0
    # ring layout
    primaries: list[str] = field(default_factory=list)
    servers: list[str] = field(default_factory=list)
    policy: str | None = None
    k_cap: int = 1024
    secondary_rings: list[SecondaryRing] = field(default_factory=list)
    regions: dict[str, RegionSpec] = field(default_factory=dict)
    # traffic
    sources: list[str] = field(default_factory=list)
    messages: int = 0
    start: float = 0.05
    duration: float = 1.0
    pattern: str = "uniform"
    explicit: dict[str, list[tuple[float, bytes]]] = field(default_factory=dict)
    symbols: list[str] = field(default_factory=lambda: ["ACME", "BOLT", "CRUX"])
    price_rule: str = "SellerPrice"
    traders: dict[str, tuple[str, Decimal, dict[str, int]]] = field(default_factory=dict)
    # faults
    crashes: list[tuple[str, float]] = field(default_factory=list)
    recovers: list[tuple[str, float]] = field(default_factory=list)
    crash_token_site: list[float] = field(default_factory=list)
    # nack reduction
    nack_enabled: bool = False
    nack_k_p: int = 1
    # striping
    stripe_budget: float | None = None
    symbol_rates: dict[str, float] = field(default_factory=dict)
    # layering worked numbers (reported, not simulated)
    layering_receivers: int | None = None
    layering_layers: int | None = None
    lines: dict[str, int] = field(default_factory=dict)
    # arguments of generate_topology when the tree was generated (lets sweeps vary m)
    generate_spec: dict | None = None

    # -- derived values
    def timing(self) -> TimingParams:
        tau_r = self.tau_r if self.tau_r is not None else 2 * self.delta_n + self.x + self.p
        tau_t = self.tau_t if self.tau_t is not None else self.delta_n + self.k_r * tau_r
        override = self.delta_a is not None
        delta_a = self.delta_a if override else tau_t
        return TimingParams(self.delta_n, self.k_r, self.x, self.p, tau_r, tau_t, delta_a, override)

    def timing_us(self) -> tuple[int, int, int, int, int]:
        """(delta_n, tau_r, tau_t, delta_a, epsilon) in integer microseconds.

        Derived values are summed in microseconds so the delivery delay and the
        request give-up instant coincide exactly.
        """
        us = lambda v: round(v * 1_000_000)  # noqa: E731
        dn = us(self.delta_n)
        tau_r = us(self.tau_r) if self.tau_r is not None else 2 * dn + us(self.x) + us(self.p)
        tau_t = us(self.tau_t) if self.tau_t is not None else dn + self.k_r * tau_r
        delta_a = us(self.delta_a) if self.delta_a is not None else tau_t
        return dn, tau_r, tau_t, delta_a, us(self.epsilon)

    @property
    def resolved_policy(self) -> str:
        if self.policy:
            return self.policy
        return "conservative" if self.app == "floor" else "ticker"

    def layout(self) -> RingLayout:
        regions = {rt: Region(rt, dict(r.customers), r.fallback) for rt, r in self.regions.items()}
        return RingLayout(list(self.primaries), list(self.secondary_rings), {rt: rt for rt in regions}, regions)

    def accounts(self) -> dict[str, Account]:
        return {tid: Account(Decimal(funds), dict(pos)) for tid, (_, funds, pos) in self.traders.items()}

    def _line(self, key: str) -> int | None:
        return self.lines.get(key)

    def error(self, key: str, message: str) -> ScenarioError:
        return ScenarioError(key, self._line(key), message)

    # -- validation
    def validate(self) -> None:
        if self.app not in APPS:
            raise self.error("app", f"unknown application {self.app!r}; choose one of {', '.join(APPS)}")
        if self.horizon <= 0:
            raise self.error("horizon", "must be positive")
        try:
            self.timing().validate()
        except ValueError as exc:
            raise self.error("delta_n", str(exc)) from None
        if self.resolved_policy not in ("ticker", "conservative"):
            raise self.error("policy", "must be ticker or conservative")
        if not self.primaries:
            raise self.error("primaries", "at least one primary receiver is required")
        if not self.servers:
            raise self.error("servers", "at least one reformation server is required")
        if self.k_cap < 1:
            raise self.error("k_cap", "must be at least 1")
        m = len(self.primaries)
        if not 1 <= self.nack_k_p <= m:
            raise self.error("nack_k_p", f"k_p={self.nack_k_p} must lie in [1, m={m}]")
        if self.price_rule not in PRICE_RULES:
            raise self.error("price_rule", f"unknown price rule {self.price_rule!r}")
        try:
            self.layout().validate()
        except ValueError as exc:
            raise self.error("ring", str(exc)) from None
        for rt, region in self.regions.items():
            for cust, grade in region.customers.items():
                if grade not in GRADES:
                    raise self.error(f"region.{rt}", f"customer {cust}: unknown grade {grade!r}")
        trees = self.trees()  # raises on malformed topology
        tree = trees["global"]
        for node in [*self.primaries, *self.layout().secondaries, *self.sources, *self.servers]:
            if node not in tree:
                raise self.error("topology", f"node {node} is not attached to the tree")
        ids = [*self.primaries, *self.layout().secondaries, *self.sources, *self.servers]
        if len(set(ids)) != len(ids):
            raise self.error("ring", "a node id is used for two roles")
        if not 0.0 <= self.unicast_loss <= 1.0:
            raise self.error("unicast_loss", "must lie in [0, 1]")
        if self.app in ("orders", "floor") and self.messages and not self.traders:
            raise self.error("traders", f"the {self.app} application needs at least one trader")
        for tid, (src, _, _) in self.traders.items():
            if src not in self.sources:
                raise self.error("traders", f"trader {tid} enters through unknown source {src}")
        known = set(ids)
        for node, _ in [*self.crashes, *self.recovers]:
            if node not in known:
                raise self.error("faults", f"unknown node {node}")
        if self.stripe_budget is not None:
            try:
                assign_stripes(self.symbol_rates, self.stripe_budget).validate()
            except ValueError as exc:
                raise self.error("stripe_budget", str(exc)) from None
        if self.pattern not in ("uniform", "poisson", "striped"):
            raise self.error("pattern", "must be uniform, poisson or striped")
        if self.pattern == "striped" and not self.symbol_rates:
            raise self.error("pattern", "striped traffic needs symbol rates")
        if self.layering_receivers is not None:
            if self.layering_receivers < 1 or (self.layering_layers or 0) < 1:
                raise self.error("layering", "receivers and layers must be positive")
        # the network budget must cover the slowest path between protocol nodes
        far = _max_distance(tree, set(ids))
        if far > round(self.delta_n * 1_000_000):
            raise self.error("delta_n", f"delta_n is below the longest path delay {far / 1e6:.6f}s")

    def trees(self) -> dict[str, Tree]:
        if not self.tree:
            raise self.error("topology", "the topology is empty")
        out: dict[str, Tree] = {}
        try:
            out["global"] = Tree("global", {n: v[0] for n, v in self.tree.items()},
                                 {n: v[1] for n, v in self.tree.items()},
                                 {n: v[2] for n, v in self.tree.items() if v[2]})
            for rt, region in self.regions.items():
                parent = {rt: None, f"hub.{rt}": rt}
                delay = {f"hub.{rt}": region.edge_delay}
                loss = {f"hub.{rt}": region.edge_loss} if region.edge_loss else {}
                for cust in region.customers:
                    parent[cust] = f"hub.{rt}"
                    delay[cust] = region.edge_delay
                if region.fallback is not None:
                    parent[region.fallback] = f"hub.{rt}"
                    delay[region.fallback] = region.edge_delay
                out[f"region:{rt}"] = Tree(f"region:{rt}", parent, delay, loss)
        except TopologyError as exc:
            raise self.error("topology", str(exc)) from None
        return out

    # -- traffic
    def workload(self) -> dict[str, list[tuple[float, bytes]]]:
        """Per-source (time, payload) schedule, deterministic in the seed."""
        out: dict[str, list[tuple[float, bytes]]] = {s: list(v) for s, v in self.explicit.items()}
        for s in self.sources:
            out.setdefault(s, [])
        if not self.sources:
            return out
        rng = random.Random(f"{self.seed}/workload")
        if self.pattern == "striped":
            srcs = self.sources
            for i, (sym, rate) in enumerate(sorted(self.symbol_rates.items())):
                if rate <= 0:
                    continue
                step = 1.0 / rate
                at = self.start + step * rng.random()
                while at < self.start + self.duration:
                    out[srcs[i % len(srcs)]].append((at, f"{sym}@{100 + rng.randrange(50)}".encode()))
                    at += step
            return out
        times: list[float] = []
        if self.pattern == "uniform":
            gap = self.duration / max(1, self.messages)
            times = [self.start + i * gap for i in range(self.messages)]
        else:
            at = self.start
            rate = self.messages / self.duration if self.duration > 0 else 1.0
            for _ in range(self.messages):
                at += rng.expovariate(rate)
                times.append(at)
        by_source: dict[str, list[str]] = {}
        for tid, (src, _, _) in sorted(self.traders.items()):
            by_source.setdefault(src, []).append(tid)
        for i, at in enumerate(times):
            src = self.sources[i % len(self.sources)]
            out[src].append((at, self._payload(rng, src, by_source)))
        return out

    def _payload(self, rng: random.Random, src: str, by_source: dict[str, list[str]]) -> bytes:
        sym = self.symbols[rng.randrange(len(self.symbols))]
        if self.app == "ticker":
            return f"{sym}@{100 + rng.randrange(50)}".encode()
        traders = by_source.get(src) or sorted(self.traders)
        trader = traders[rng.randrange(len(traders))]
        side = "Buy" if rng.random() < 0.5 else "Sell"
        price = Decimal(95 + rng.randrange(21)) / 2 + 50
        return Order(trader, side, sym, price, 1 + rng.randrange(10)).encode()


def _max_distance(tree: Tree, nodes: set[str]) -> int:
    """Largest path delay between any two of ``nodes`` (two sweeps on a tree)."""
    nodes = [n for n in nodes if n in tree]
    if len(nodes) < 2:
        return 0
    first = tree.distances(nodes[0])
    far = max(nodes, key=lambda n: first[n])
    second = tree.distances(far)
    return max(second[n] for n in nodes)


# -- parsing ---------------------------------------------------------------------

def _read_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    lines = text.splitlines()
    head = next(((i, ln.strip()) for i, ln in enumerate(lines, 1) if ln.strip()), (1, ""))
    if head[1] != FORMAT_TAG:
        raise ScenarioError("format", head[0], f"first line must be {FORMAT_TAG!r}")
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: dict[str, tuple[str, int]] | None = None
    for no, raw in enumerate(lines, 1):
        if no <= head[0]:
            continue
        line = raw.split(" #", 1)[0].strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name in sections:
                raise ScenarioError(name, no, "section appears twice")
            current = sections[name] = {}
            continue
        if "=" not in line or current is None:
            raise ScenarioError("syntax", no, f"expected 'key = value' inside a section, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in current:
            raise ScenarioError(key, no, "key appears twice in its section")
        current[key] = (value.strip(), no)
    return sections


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


class _Reader:
    def __init__(self, sc: Scenario, section: str, entries: dict[str, tuple[str, int]]) -> None:
        self.sc = sc
        self.section = section
        self.entries = dict(entries)

    def take(self, key: str, conv=str, default=None, name: str | None = None):
        name = name or key
        if key not in self.entries:
            return default
        value, line = self.entries.pop(key)
        self.sc.lines[name] = line
        try:
            return conv(value)
        except (ValueError, ArithmeticError) as exc:
            raise ScenarioError(name, line, f"cannot read {value!r}: {exc}") from None

    def done(self) -> None:
        for key, (_, line) in self.entries.items():
            raise ScenarioError(f"{self.section}.{key}", line, "unknown key")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _at_list(text: str) -> list[tuple[str, float]]:
    out = []
    for item in _split(text):
        node, _, at = item.partition("@")
        if not at:
            raise ValueError(f"expected node@time, got {item!r}")
        out.append((node.strip(), float(at)))
    return out


def _pairs(text: str, conv=float) -> dict[str, object]:
    out = {}
    for item in _split(text):
        k, _, v = item.partition(":")
        if not v:
            raise ValueError(f"expected name:value, got {item!r}")
        out[k.strip()] = conv(v.strip())
    return out


def parse_scenario(text: str) -> Scenario:
    sections = _read_sections(text)
    sc = Scenario()
    known = {"run", "timing", "topology", "generate", "ring", "sources", "workload", "app", "traders",
             "faults", "nack", "striping", "layering", "unicast"}

    r = _Reader(sc, "run", sections.pop("run", {}))
    sc.seed = r.take("seed", int, sc.seed)
    sc.horizon = r.take("horizon", float, sc.horizon)
    sc.app = r.take("app", str, sc.app)
    r.done()

    r = _Reader(sc, "timing", sections.pop("timing", {}))
    for key, conv in (("delta_n", float), ("k_r", int), ("x", float), ("p", float), ("tau_r", float),
                      ("tau_t", float), ("delta_a", float), ("epsilon", float)):
        setattr(sc, key, r.take(key, conv, getattr(sc, key)))
    r.done()

    generate = sections.pop("generate", None)
    topology = sections.pop("topology", None)
    if generate is not None and topology is not None:
        raise ScenarioError("topology", topology and min(v[1] for v in topology.values()),
                            "give either [topology] or [generate], not both")
    if topology is not None:
        for node, (value, line) in topology.items():
            sc.lines[f"topology.{node}"] = line
            parts = _split(value)
            try:
                parent = None if parts[0] == "-" else parts[0]
                delay = float(parts[1]) if len(parts) > 1 else 0.0
                loss = float(parts[2]) if len(parts) > 2 else 0.0
            except (IndexError, ValueError):
                raise ScenarioError(f"topology.{node}", line, "expected 'parent, delay[, loss]'") from None
            if delay < 0:
                raise ScenarioError(f"topology.{node}", line, "delay must be non-negative")
            if not 0 <= loss <= 1:
                raise ScenarioError(f"topology.{node}", line, "loss must lie in [0, 1]")
            sc.tree[node] = (parent, delay, loss)

    r = _Reader(sc, "ring", sections.pop("ring", {}))
    sc.primaries = r.take("primaries", _split, [])
    sc.servers = r.take("servers", _split, [])
    sc.policy = r.take("policy", str, None)
    sc.k_cap = r.take("k_cap", int, sc.k_cap)
    r.done()

    r = _Reader(sc, "sources", sections.pop("sources", {}))
    sc.sources = r.take("ids", _split, [], name="sources")
    r.done()

    if generate is not None:
        r = _Reader(sc, "generate", generate)
        spec = dict(
            primaries=r.take("primaries", int, 4), sources=r.take("sources", int, 2),
            servers=r.take("servers", int, 1), fanout=r.take("fanout", int, 4),
            link_delay=r.take("link_delay", float, 0.002), node_loss=r.take("node_loss", float, 0.0),
            secondary_rings=r.take("secondary_rings", int, 0), secondary_size=r.take("secondary_size", int, 0),
        )
        r.done()
        try:
            generate_topology(sc, **spec)
        except ValueError as exc:
            raise ScenarioError("generate", min(v[1] for v in generate.values()) if generate else None,
                                str(exc)) from None

    r = _Reader(sc, "unicast", sections.pop("unicast", {}))
    sc.unicast_loss = r.take("loss", float, sc.unicast_loss, name="unicast_loss")
    r.done()

    r = _Reader(sc, "workload", sections.pop("workload", {}))
    sc.messages = r.take("messages", int, sc.messages)
    sc.start = r.take("start", float, sc.start)
    sc.duration = r.take("duration", float, sc.duration)
    sc.pattern = r.take("pattern", str, sc.pattern)
    sc.symbols = r.take("symbols", _split, sc.symbols)
    for key in [k for k in r.entries if k.startswith("at.")]:
        src = key[3:]
        sc.explicit[src] = [(t, f"{src}-{i + 1}".encode())
                            for i, t in enumerate(r.take(key, lambda v: [float(x) for x in _split(v)]))]
    r.done()

    r = _Reader(sc, "app", sections.pop("app", {}))
    sc.price_rule = r.take("price_rule", str, sc.price_rule)
    r.done()

    for tid, (value, line) in sections.pop("traders", {}).items():
        sc.lines["traders"] = line
        parts = _split(value)
        try:
            src, funds = parts[0], Decimal(parts[1])
            positions = _pairs(",".join(parts[2:]), int) if len(parts) > 2 else {}
        except (IndexError, ArithmeticError, ValueError):
            raise ScenarioError(f"traders.{tid}", line, "expected 'source, funds[, SYM:qty ...]'") from None
        sc.traders[tid] = (src, funds, positions)

    r = _Reader(sc, "faults", sections.pop("faults", {}))
    sc.crashes = r.take("crash", _at_list, [], name="faults")
    sc.recovers = r.take("recover", _at_list, [], name="faults")
    sc.crash_token_site = r.take("crash_token_site", lambda v: [float(x) for x in _split(v)], [],
                                 name="faults")
    r.done()

    r = _Reader(sc, "nack", sections.pop("nack", {}))
    sc.nack_enabled = r.take("nack_enabled", _bool, sc.nack_enabled)
    sc.nack_k_p = r.take("nack_k_p", int, sc.nack_k_p)
    r.done()

    r = _Reader(sc, "striping", sections.pop("striping", {}))
    sc.stripe_budget = r.take("budget", float, None, name="stripe_budget")
    sc.symbol_rates = r.take("rates", _pairs, {}, name="symbol_rates")
    r.done()

    r = _Reader(sc, "layering", sections.pop("layering", {}))
    sc.layering_receivers = r.take("receivers", int, None, name="layering")
    sc.layering_layers = r.take("layers", int, None, name="layering")
    r.done()

    for name in sorted(sections):
        entries = sections[name]
        line = min((v[1] for v in entries.values()), default=None)
        if name.startswith("secondary."):
            r = _Reader(sc, name, entries)
            ring = SecondaryRing(name.split(".", 1)[1], r.take("members", _split, [], name=name),
                                 r.take("bridge", str, "", name=name), r.take("assigned", _split, [], name=name))
            r.done()
            sc.secondary_rings.append(ring)
        elif name.startswith("region."):
            r = _Reader(sc, name, entries)
            rt = name.split(".", 1)[1]
            sc.regions[rt] = RegionSpec(r.take("fallback", str, None, name=name),
                                        r.take("customers", lambda v: _pairs(v, str), {}, name=name),
                                        r.take("edge_delay", float, 0.005, name=name),
                                        r.take("edge_loss", float, 0.0, name=name))
            r.done()
        elif name not in known:
            raise ScenarioError(name, line, "unknown section")
    sc.validate()
    return sc


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def generate_topology(sc: Scenario, primaries: int, sources: int, servers: int = 1, fanout: int = 4,
                      link_delay: float = 0.002, node_loss: float = 0.0, secondary_rings: int = 0,
                      secondary_size: int = 0) -> Scenario:
    """Fill ``sc`` with a balanced tree: every non-root node drops with ``node_loss``."""
    if primaries < 1 or sources < 0 or servers < 1 or fanout < 2:
        raise ValueError("need primaries >= 1, servers >= 1 and fanout >= 2")
    sc.generate_spec = dict(primaries=primaries, sources=sources, servers=servers, fanout=fanout,
                            link_delay=link_delay, node_loss=node_loss, secondary_rings=secondary_rings,
                            secondary_size=secondary_size)
    sc.primaries = [f"P{i}" for i in range(primaries)]
    sc.sources = [f"A{i}" for i in range(sources)]
    sc.servers = [f"X{i}" for i in range(servers)]
    sc.secondary_rings = []
    sec_ids: list[str] = []
    for i in range(secondary_rings):
        members = [f"S{i}_{j}" for j in range(secondary_size)]
        bridge = sc.primaries[i % primaries]
        assigned = [sc.primaries[(i + 1) % primaries], sc.primaries[(i + 1 + primaries // 2) % primaries]]
        assigned = [a for a in dict.fromkeys(assigned) if a != bridge] or [bridge]
        sc.secondary_rings.append(SecondaryRing(f"ring{i}", members, bridge, assigned))
        sec_ids.extend(members)
    leaves = [*sc.primaries, *sec_ids, *sc.sources]
    tree: dict[str, tuple[str | None, float, float]] = {"core": (None, 0.0, 0.0)}
    level = leaves
    depth = 0
    while len(level) > fanout:
        depth += 1
        parents = []
        for j in range(0, len(level), fanout):
            router = f"r{depth}_{j // fanout}"
            for child in level[j:j + fanout]:
                tree[child] = (router, link_delay, node_loss)
            parents.append(router)
        level = parents
    for child in level:
        tree[child] = ("core", link_delay, node_loss)
    for x in sc.servers:
        tree[x] = ("core", link_delay, 0.0)
    sc.tree = tree
    return sc


def layering_summary(sc: Scenario) -> dict[str, int] | None:
    if sc.layering_receivers is None:
        return None
    size = layer_size(sc.layering_receivers, sc.layering_layers or 1)
    return {"layer_receivers": sc.layering_receivers, "layer_count": sc.layering_layers or 1,
            "layer_size": size}
