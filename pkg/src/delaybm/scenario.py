"""One simulation cell: a leaf-spine fabric carrying web-search and incast traffic.

A cell is fully described by :class:`CellSpec`. Running it returns the flow
records, the occupancy series and the drop log, and can write them as CSVs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import metrics
from .net import Network, TopologySpec, build_leaf_spine
from .policies import ConfigError, as_fraction, make_policy
from .sim import (NS_PER_S, STREAM_ECMP, STREAM_INCAST, STREAM_WEBSEARCH, Simulator, rng_stream)
from .switch import SharedBufferSwitch
from .transport import Flow, TransportParams, base_rtt
from .workload import (FlowSizeCdf, IncastSpec, LoadSpec, generate_incast, schedule_poisson_arrivals,
                       websearch_cdf)

DropRecord = Tuple[int, int, int, int, str]


@dataclass(frozen=True)
class CellSpec:
    scheme: str = "delay-bm"
    seed: int = 1
    topology: TopologySpec = TopologySpec()
    kb_per_port_per_gbps: float = 9.6
    alphas: Tuple[Tuple[int, float], ...] = ((0, 0.5),)
    transports: Tuple[Tuple[int, str], ...] = ((0, "dctcp"),)
    load: float = 0.4  # web-search load; 0 disables background traffic
    burst: float = 0.3  # incast request size as a fraction of the leaf buffer; 0 disables incast
    incast_fanout: int = 8
    incast_requests_per_second: float = 2.0
    incast_cross_leaf: bool = True
    incast_priority: int = 0
    websearch_cdf: Optional[str] = None  # path; None uses the bundled distribution
    duration_ns: int = 100_000_000
    drain_ns: int = 50_000_000
    min_bytes: int = 1500
    congestion_fraction: float = 0.9
    congestion_reference: str = "threshold"
    update_period_ns: Optional[int] = None  # None: base RTT of the longest path
    first_rtt_schemes: Tuple[str, ...] = ("delay-bm",)
    first_rtt_alpha_factor: float = 2.0
    ecn_k_packets: int = 65
    init_cwnd_pkts: int = 10
    dctcp_g: float = 1 / 16
    min_rto_ns: int = 1_000_000
    short_flow_cutoff: int = 100_000
    policy_params: Tuple[Tuple[str, object], ...] = ()
    scenario: str = ""

    @property
    def alpha_map(self) -> Dict[int, Fraction]:
        return {p: as_fraction(a) for p, a in self.alphas}

    @property
    def transport_map(self) -> Dict[int, str]:
        return dict(self.transports)

    @property
    def uses_first_rtt(self) -> bool:
        return self.scheme in self.first_rtt_schemes and self.first_rtt_alpha_factor > 0

    def validate(self) -> None:
        self.topology.validate()
        prios = sorted(self.alpha_map)
        if prios != list(range(len(prios))):
            raise ConfigError("alphas must cover priorities 0..P-1")
        if sorted(self.transport_map) != prios:
            raise ConfigError("every priority needs exactly one transport")
        if self.incast_priority not in self.alpha_map:
            raise ConfigError(f"incast priority {self.incast_priority} has no alpha")
        if not 0 <= self.load < 1:
            raise ConfigError(f"load must lie in [0, 1), got {self.load}")
        if not 0 <= self.burst <= 1:
            raise ConfigError(f"burst must lie in [0, 1], got {self.burst}")
        if self.duration_ns <= 0 or self.drain_ns < 0:
            raise ConfigError("duration must be positive and drain non-negative")

    def longest_path_rtt(self) -> int:
        t = self.topology
        links = [(t.host_link_bps, t.propagation_ns)]
        if t.leaves > 1:
            links += [(t.uplink_bps, t.propagation_ns)] * 2
        links.append((t.host_link_bps, t.propagation_ns))
        return base_rtt(links)


@dataclass
class CellResult:
    spec: CellSpec
    flows: metrics.FctDataset
    occupancy: metrics.OccupancySeries
    drops: List[DropRecord]
    delivered_bytes: int  # unique payload bytes delivered by the end of the traffic period
    events: int
    trace: Optional[List[str]] = None
    switches: List[SharedBufferSwitch] = field(default_factory=list)

    @property
    def mean_throughput_bps(self) -> float:
        return self.delivered_bytes * 8 * NS_PER_S / self.spec.duration_ns

    def summary_row(self, extra: Dict[str, object]) -> Dict[str, object]:
        row: Dict[str, object] = {"scheme": self.spec.scheme, "scenario": self.spec.scenario,
                                  "seed": self.spec.seed, **extra}
        row.update(metrics.slowdown_stats(self.flows))
        row["completed_flows"] = len(self.flows.records)
        row["incomplete_flows"] = len(self.flows.incomplete)
        try:
            row["mean_occupancy_bytes"] = f"{self.occupancy.mean(0, self.spec.duration_ns):.1f}"
        except metrics.NoData:
            row["mean_occupancy_bytes"] = ""
        row["mean_throughput_bps"] = f"{self.mean_throughput_bps:.1f}"
        return row

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics.write_flows(out_dir / "flows.csv", self.flows)
        metrics.write_incomplete(out_dir / "incomplete.csv", self.flows)
        metrics.write_occupancy(out_dir / "occupancy.csv", self.occupancy)
        metrics.write_drops(out_dir / "drops.csv", self.drops)
        if self.trace is not None:
            (out_dir / "trace.txt").write_text("\n".join(self.trace) + "\n")


def _load_cdf(spec: CellSpec) -> FlowSizeCdf:
    return FlowSizeCdf.from_file(spec.websearch_cdf) if spec.websearch_cdf else websearch_cdf()


def run_cell(spec: CellSpec, trace: bool = False, keep_switches: bool = False) -> CellResult:
    spec.validate()
    sim = Simulator(trace=trace)
    topo = spec.topology
    alphas = spec.alpha_map
    n_base = len(alphas)
    first_rtt_class: Optional[int] = None
    if spec.uses_first_rtt:
        first_rtt_class = n_base
        alphas[first_rtt_class] = as_fraction(spec.first_rtt_alpha_factor) * alphas[0]
    update_period = spec.update_period_ns if spec.update_period_ns is not None else spec.longest_path_rtt()
    drops: List[DropRecord] = []
    params = dict(spec.policy_params)
    params.setdefault("min_bytes", spec.min_bytes)

    def on_drop(t: int, sw: int, port: int, prio: int, reason: str) -> None:
        drops.append((t, sw, port, prio, reason))

    def make_switch(switch_id: int, total_B: int) -> SharedBufferSwitch:
        return SharedBufferSwitch(sim, switch_id, total_B, make_policy(spec.scheme, params), alphas,
                                  update_period_ns=update_period,
                                  congestion_fraction=as_fraction(spec.congestion_fraction),
                                  congestion_reference=spec.congestion_reference,
                                  ecn_k_packets=spec.ecn_k_packets, on_drop=on_drop)

    salt = int(rng_stream(spec.seed, STREAM_ECMP).integers(1 << 62))
    net = build_leaf_spine(sim, topo, make_switch, spec.kb_per_port_per_gbps, ecmp_salt=salt)
    leaf_B = net.leaves[0].total_B

    transports = {p: TransportParams(kind, spec.init_cwnd_pkts, float(spec.dctcp_g), spec.min_rto_ns)
                  for p, kind in spec.transport_map.items()}
    dataset = metrics.FctDataset()
    live: Dict[int, Flow] = {}

    def finished(flow: Flow) -> None:
        dataset.records.append(flow.record())

    def start_flow(fid: int, src: int, dst: int, size: int, prio: int, klass: str) -> None:
        route = net.route((src, dst, fid & 0xFFFF, 80, 6))
        flow = Flow(sim, fid, net.hosts[src], net.hosts[dst], size, route, net.path_links(route),
                    transports[prio], priority=prio, first_rtt_class=first_rtt_class, klass=klass,
                    on_finish=finished)
        live[fid] = flow
        flow.start()

    fid = 0
    if spec.load > 0:
        cdf = _load_cdf(spec)
        capacity = topo.leaves * topo.spines * topo.uplink_bps
        arrivals = schedule_poisson_arrivals(LoadSpec(spec.load, capacity), cdf, topo.n_hosts,
                                             rng_stream(spec.seed, STREAM_WEBSEARCH), spec.duration_ns)
        for a in arrivals:
            prio = fid % n_base
            sim.schedule(a.time, start_flow, fid, a.src, a.dst, a.size, prio,
                         metrics.short_flow_classifier(a.size, spec.short_flow_cutoff))
            fid += 1
    if spec.burst > 0 and spec.incast_requests_per_second > 0:
        ispec = IncastSpec(spec.incast_fanout, spec.burst, spec.incast_requests_per_second, spec.incast_cross_leaf)
        for req in generate_incast(ispec, leaf_B, rng_stream(spec.seed, STREAM_INCAST), topo.n_hosts,
                                   topo.hosts_per_leaf, spec.duration_ns):
            for responder in req.responders:
                sim.schedule(req.time, start_flow, fid, responder, req.aggregator, req.response_bytes,
                             spec.incast_priority, metrics.INCAST)
                fid += 1

    occupancy = metrics.OccupancySeries()
    switches = net.switches
    period = max(1, update_period // 4)
    end = spec.duration_ns + spec.drain_ns

    def sample() -> None:
        occupancy.add(sim.now, sum(sw.occupied for sw in switches) // len(switches))
        if sim.now + period <= end:
            sim.schedule(sim.now + period, sample)

    sim.schedule(period, sample)
    delivered = [0]

    def snapshot() -> None:
        delivered[0] = sum(f.delivered for f in live.values())

    sim.schedule(spec.duration_ns, snapshot)
    stats = sim.run_until(end)

    for f in live.values():
        if not f.done:
            dataset.incomplete.append((f.id, f.klass, f.size, f.start_time))
    dataset.records.sort(key=lambda r: r.flow_id)
    for sw in switches:
        metrics.check_drop_accounting(sw.queues)
    return CellResult(spec, dataset, occupancy, drops, delivered[0], stats.events_fired, sim.trace,
                      switches if keep_switches else [])


def idle_network(spec: CellSpec) -> Tuple[Simulator, Network]:
    """A built fabric with no traffic, for single-flow experiments."""
    sim = Simulator()
    alphas = spec.alpha_map

    def make_switch(switch_id: int, total_B: int) -> SharedBufferSwitch:
        return SharedBufferSwitch(sim, switch_id, total_B, make_policy(spec.scheme, {"min_bytes": spec.min_bytes}),
                                  alphas)

    return sim, build_leaf_spine(sim, spec.topology, make_switch, spec.kb_per_port_per_gbps)
