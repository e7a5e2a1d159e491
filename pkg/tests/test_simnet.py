import pytest

from stockcast.simnet import Network, Node, TopologyError, Trace, Tree, fmt_us, parse_us, to_us


class Sink(Node):
    def __init__(self, node_id):
        super().__init__(node_id)
        self.got = []

    def on_message(self, msg, sender):
        self.got.append((self.net.now, msg, sender))

    def on_timer(self, tag, data):
        self.got.append((self.net.now, f"timer:{tag}", None))


def star_tree(loss=None):
    parent = {"root": None, "mid": "root", "a": "mid", "b": "mid", "c": "root", "src": "root"}
    delay = {"mid": 0.010, "a": 0.001, "b": 0.002, "c": 0.005, "src": 0.001}
    return Tree("global", parent, delay, loss)


def network(loss=None, seed=1):
    net = Network({"global": star_tree(loss)}, seed)
    sinks = {n: net.add_node(Sink(n)) for n in ("a", "b", "c", "src")}
    net.set_group("all", ["a", "b", "c"])
    return net, sinks


def test_time_formatting_round_trip():
    assert fmt_us(1_080_000) == "1.080000"
    assert parse_us("1.08") == 1_080_000
    assert parse_us(fmt_us(-5)) == -5
    assert to_us(0.0000005) in (0, 1)


def test_tree_shape_errors():
    with pytest.raises(TopologyError, match="exactly one root"):
        Tree("t", {"a": None, "b": None}, {})
    with pytest.raises(TopologyError, match="unknown node"):
        Tree("t", {"a": None, "b": "zz"}, {})
    with pytest.raises(TopologyError, match="not connected"):
        Tree("t", {"r": None, "a": "b", "b": "a"}, {})
    with pytest.raises(TopologyError, match="negative"):
        Tree("t", {"r": None, "a": "r"}, {"a": -1})
    with pytest.raises(TopologyError):
        Tree("t", {"r": None, "a": "r"}, {}, {"a": 2.0})


def test_lossless_multicast_arrives_at_path_delay():
    net, sinks = network()
    net.multicast("global", "src", "all", "hello")
    net.run(to_us(1))
    assert sinks["a"].got == [(12_000, "hello", "src")]
    assert sinks["b"].got == [(13_000, "hello", "src")]
    assert sinks["c"].got == [(6_000, "hello", "src")]
    assert sinks["src"].got == []


def test_interior_loss_cuts_every_descendant():
    net, sinks = network(loss={"mid": 1.0})
    net.multicast("global", "src", "all", "x")
    net.run(to_us(1))
    assert not sinks["a"].got and not sinks["b"].got and sinks["c"].got
    assert star_tree().subtree_leaves("mid", "src") == {"a", "b"}


def test_same_seed_same_outcome():
    def outcome(seed):
        net, sinks = network(loss={"mid": 0.5, "c": 0.5}, seed=seed)
        for i in range(50):
            net.multicast("global", "src", "all", i)
        net.run(to_us(1))
        return {n: s.got for n, s in sinks.items()}, net.trace.dumps()
    assert outcome(3) == outcome(3)
    assert outcome(3) != outcome(4)


def test_unicast_delay_and_override():
    net = Network({"global": star_tree()}, 1, unicast_delay={("src", "c"): 0.080})
    sink = net.add_node(Sink("c"))
    net.now = to_us(1.0)
    net.unicast("src", "c", "m")
    net.run(to_us(2))
    assert sink.got == [(1_080_000, "m", "src")]


def test_unicast_loss_drops():
    net = Network({"global": star_tree()}, 1, unicast_loss=1.0)
    sink = net.add_node(Sink("c"))
    assert net.unicast("src", "c", "m") is False
    net.run(to_us(1))
    assert sink.got == []


def test_delivery_runs_before_timer_at_same_instant():
    net, sinks = network()
    net.timer("c", 6_000, "tick")
    net.multicast("global", "src", "all", "m")
    net.run(to_us(1))
    assert [g[1] for g in sinks["c"].got] == ["m", "timer:tick"]


def test_crash_silences_node_until_recovery():
    net, sinks = network()
    net.schedule(0, "c", "crash")
    net.schedule(7_000, "c", "recover")
    net.multicast("global", "src", "all", "lost")
    net.run(8_000)
    net.multicast("global", "src", "all", "kept")
    net.run(to_us(1))
    assert [g[1] for g in sinks["c"].got] == ["kept"]
    kinds = [r[2] for r in net.trace.records]
    assert kinds == ["crash", "recover"]


def test_trace_rejects_separator_in_value():
    tr = Trace()
    tr.add(0, "n", "k", v="a b")
    with pytest.raises(ValueError):
        tr.dumps()
