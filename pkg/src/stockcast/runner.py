"""Build a simulated deployment from a scenario, run it and collect the trace."""
from __future__ import annotations

from dataclasses import dataclass

from .scenario import Scenario, layering_summary
from .layering import assign_stripes
from .nodes import (
    CustomerNode, FaultInjector, ReceiverNode, ReformationNode, SimConfig, SourceNode,
)
from .simnet import Network, Trace, to_us
from .verify import compute_metrics, parse_trace


class Simulation:
    def __init__(self, sc: Scenario) -> None:
        sc.validate()
        self.sc = sc
        dn, tau_r, tau_t, delta_a, eps = sc.timing_us()
        layout = sc.layout()
        customers = {c: (rt, r.fallback, g) for rt, r in sc.regions.items() for c, g in r.customers.items()}
        self.cfg = SimConfig(
            delta_n=dn, k_r=sc.k_r, tau_r=tau_r, tau_t=tau_t, delta_a=delta_a, layout=layout,
            servers=list(sc.servers), sources=list(sc.sources), epsilon=eps, k_cap=sc.k_cap,
            k_p=sc.nack_k_p, nack=sc.nack_enabled, policy=sc.resolved_policy, app=sc.app,
            price_rule=sc.price_rule, accounts=sc.accounts(), customers=customers,
        )
        self.trace = Trace()
        self.net = Network(sc.trees(), sc.seed, sc.unicast_loss, self.trace)
        net = self.net
        net.set_group("rt", layout.receivers)
        net.set_group("all", [*layout.receivers, *sc.sources])
        net.set_group("rp", layout.primaries)
        for rt, region in sc.regions.items():
            net.set_group(f"region:{rt}", region.customers)
        prim = set(layout.primaries)
        self.receivers = [net.add_node(ReceiverNode(r, self.cfg, primary=r in prim)) for r in layout.receivers]
        workload = sc.workload()
        self.sources = [net.add_node(SourceNode(s, self.cfg, [(to_us(at), payload) for at, payload in workload[s]]))
                        for s in sc.sources]
        copies = max(1, sc.k_r) if sc.unicast_loss > 0 else 1
        self.servers = [net.add_node(ReformationNode(x, self.cfg, copies)) for x in sc.servers]
        self.customers = [net.add_node(CustomerNode(c, self.cfg, rt, fb, g)) for c, (rt, fb, g) in customers.items()]
        if eps:
            for node in [*self.receivers, *self.sources]:
                node.clock_offset = net.rng(f"clock:{node.id}").randint(-eps, eps)
        for node_id, at in sc.crashes:
            net.schedule(to_us(at), node_id, "crash")
        for node_id, at in sc.recovers:
            net.schedule(to_us(at), node_id, "recover")
        if sc.crash_token_site:
            net.add_node(FaultInjector("fault", list(layout.primaries)))
            for at in sc.crash_token_site:
                net.timer("fault", to_us(at), "crash_site")

    def meta(self) -> dict:
        sc, cfg = self.sc, self.cfg
        fields = dict(
            seed=sc.seed, horizon=to_us(sc.horizon), app=sc.app, policy=cfg.policy,
            delta_n=cfg.delta_n, k_r=cfg.k_r, tau_r=cfg.tau_r, tau_t=cfg.tau_t, delta_a=cfg.delta_a,
            epsilon=cfg.epsilon, m=len(cfg.layout.primaries), primaries=cfg.layout.primaries,
            k_p=cfg.k_p, nack=cfg.nack, unicast_loss=sc.unicast_loss,
            sec_rings=";".join(f"{r.name}:{'/'.join(r.order)}" for r in cfg.layout.secondary_rings),
        )
        if sc.stripe_budget is not None:
            table = assign_stripes(sc.symbol_rates, sc.stripe_budget)
            fields["stripes"] = len(table.stripes)
            fields["stripe_max_rate"] = f"{max(s.aggregate_rate for s in table.stripes):g}"
        summary = layering_summary(sc)
        if summary:
            fields["layer_size"] = summary["layer_size"]
        return fields

    def run(self) -> Trace:
        net = self.net
        net.emit("-", "meta", **self.meta())
        for node in [*self.receivers, *self.sources, *self.customers]:
            node.start()
        horizon = to_us(self.sc.horizon)
        net.run(horizon)
        net.emit("-", "end", halted=net.halted or "-", pending=net.pending(),
                 **{k: net.stats[k] for k in sorted(net.stats)})
        return self.trace


@dataclass
class RunResult:
    trace_text: str
    metrics: dict[str, str]
    halted: str | None


def run_scenario(sc: Scenario) -> RunResult:
    """Run once; metrics are computed from the rendered trace text, not live state."""
    sim = Simulation(sc)
    trace = sim.run()
    text = trace.dumps()
    return RunResult(text, compute_metrics(parse_trace(text)), sim.net.halted)
