"""Hosts, links and leaf-spine topology with per-flow ECMP."""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Deque, Dict, List, Optional, Tuple

from .policies import ConfigError
from .sim import NS_PER_S, Simulator
from .switch import Packet, SharedBufferSwitch

GBPS = 1_000_000_000


@dataclass(frozen=True)
class Link:
    capacity_bps: int
    propagation_ns: int
    endpoints: Tuple[str, str] = ("", "")

    def __post_init__(self):
        if self.capacity_bps <= 0:
            raise ConfigError("link capacity must be positive")
        if self.propagation_ns < 0:
            raise ConfigError("propagation delay must be non-negative")


@dataclass(frozen=True)
class TopologySpec:
    spines: int = 2
    leaves: int = 4
    hosts_per_leaf: int = 16
    host_link_bps: int = 1 * GBPS
    uplink_bps: int = 2 * GBPS
    propagation_ns: int = 10_000
    oversubscription: Optional[float] = 4.0

    @property
    def n_hosts(self) -> int:
        return self.leaves * self.hosts_per_leaf

    def actual_oversubscription(self) -> Fraction:
        return Fraction(self.hosts_per_leaf * self.host_link_bps, self.spines * self.uplink_bps)

    def validate(self) -> None:
        for name in ("spines", "leaves", "hosts_per_leaf"):
            if getattr(self, name) < 1:
                raise ConfigError(f"topology.{name} must be >= 1")
        if self.host_link_bps <= 0 or self.uplink_bps <= 0:
            raise ConfigError("link capacities must be positive")
        if self.oversubscription is not None:
            want = Fraction(str(self.oversubscription))
            if self.actual_oversubscription() != want:
                raise ConfigError(
                    f"topology oversubscription is {float(self.actual_oversubscription()):g}:1, "
                    f"configured {self.oversubscription:g}:1")


Hop = Tuple[object, int]  # (node, egress port)


class Host:
    """End host whose NIC serves its flows round-robin, one packet at a time.

    The NIC queue is unbounded, so a sender never loses packets locally;
    per-flow scheduling keeps a bulk sender's backlog from delaying the
    other flows of the same host.
    """

    def __init__(self, sim: Simulator, host_id: int, leaf: int):
        self.sim = sim
        self.id = host_id
        self.leaf = leaf
        self.nic: Dict[int, Deque[Packet]] = {}
        self.ring: Deque[int] = deque()
        self.busy = False
        self.bps = 0
        self.prop_ns = 0
        self.peer = None
        self.sent_bytes = 0
        self.received_bytes = 0

    def connect(self, bps: int, prop_ns: int, peer) -> None:
        self.bps = bps
        self.prop_ns = prop_ns
        self.peer = peer

    @property
    def backlog(self) -> int:
        return sum(len(q) for q in self.nic.values())

    def send(self, pkt: Packet) -> None:
        key = pkt.flow.id
        q = self.nic.get(key)
        if q is None:
            q = self.nic[key] = deque()
            self.ring.append(key)
        q.append(pkt)
        if not self.busy:
            self._tx_next()

    def _tx_next(self) -> None:
        if not self.ring:
            self.busy = False
            return
        self.busy = True
        key = self.ring.popleft()
        q = self.nic[key]
        pkt = q.popleft()
        if q:
            self.ring.append(key)
        else:
            del self.nic[key]
        sim = self.sim
        ser = pkt.size * 8 * NS_PER_S // self.bps
        self.sent_bytes += pkt.size
        sim.schedule(sim.now + ser, self._tx_next)
        sim.schedule(sim.now + ser + self.prop_ns, self.peer.receive, pkt)

    def receive(self, pkt: Packet) -> None:
        self.received_bytes += pkt.size
        pkt.flow.on_data(pkt)


class Network:
    """A built leaf-spine fabric."""

    def __init__(self, sim: Simulator, spec: TopologySpec, hosts: List[Host],
                 leaves: List[SharedBufferSwitch], spines: List[SharedBufferSwitch], ecmp_salt: int = 0):
        self.sim = sim
        self.spec = spec
        self.hosts = hosts
        self.leaves = leaves
        self.spines = spines
        self.ecmp_salt = ecmp_salt
        self._routes: Dict[tuple, List[Hop]] = {}

    @property
    def switches(self) -> List[SharedBufferSwitch]:
        return self.leaves + self.spines

    def spine_for(self, flow_key: tuple) -> int:
        h = hashlib.blake2b(struct.pack("<Q5q", self.ecmp_salt & 0xFFFFFFFFFFFFFFFF, *flow_key), digest_size=8).digest()
        return int.from_bytes(h, "little") % self.spec.spines

    def route(self, flow_key: tuple) -> List[Hop]:
        """flow_key = (src_host, dst_host, src_port, dst_port, proto)."""
        cached = self._routes.get(flow_key)
        if cached is not None:
            return cached
        src, dst = flow_key[0], flow_key[1]
        n = len(self.hosts)
        if not (0 <= src < n and 0 <= dst < n):
            raise ConfigError(f"unknown host in flow key {flow_key}")
        if src == dst:
            raise ConfigError("source and destination host must differ")
        hpl = self.spec.hosts_per_leaf
        s_leaf, d_leaf = src // hpl, dst // hpl
        hops: List[Hop] = [(self.hosts[src], 0)]
        if s_leaf == d_leaf:
            hops.append((self.leaves[s_leaf], dst % hpl))
        else:
            sp = self.spine_for(flow_key)
            hops.append((self.leaves[s_leaf], hpl + sp))
            hops.append((self.spines[sp], d_leaf))
            hops.append((self.leaves[d_leaf], dst % hpl))
        self._routes[flow_key] = hops
        return hops

    def path_links(self, route: List[Hop]) -> List[Tuple[int, int]]:
        """(capacity_bps, propagation_ns) of every link the route crosses."""
        out = []
        for node, port in route:
            if isinstance(node, Host):
                out.append((node.bps, node.prop_ns))
            else:
                p = node.ports[port]
                out.append((p.bps, p.prop_ns))
        return out

    def longest_base_rtt(self, ack_size: int = 64) -> int:
        """Base RTT of an inter-leaf MTU packet (or intra-leaf with one leaf)."""
        from .transport import base_rtt  # local import: transport depends on net

        if self.spec.leaves > 1:
            r = self.route((0, self.spec.hosts_per_leaf, 0, 0, 6))
        elif len(self.hosts) > 1:
            r = self.route((0, 1, 0, 0, 6))
        else:
            return 2 * self.spec.propagation_ns
        return base_rtt(self.path_links(r), ack_size=ack_size)


SwitchFactory = Callable[[int, int], SharedBufferSwitch]  # (switch_id, total_B) -> switch


def buffer_bytes(kb_per_port_per_gbps: float, port_bps: List[int]) -> int:
    """Shared buffer of a switch: KB (1024 B) per port per Gbps, summed."""
    per_gbps = Fraction(str(kb_per_port_per_gbps)) * 1024
    return int(per_gbps * Fraction(sum(port_bps), GBPS))


def build_leaf_spine(sim: Simulator, spec: TopologySpec, make_switch: Callable[[int, int], SharedBufferSwitch],
                     kb_per_port_per_gbps: float = 9.6, ecmp_salt: int = 0) -> Network:
    spec.validate()
    hpl = spec.hosts_per_leaf
    hosts = [Host(sim, h, h // hpl) for h in range(spec.n_hosts)]
    leaf_ports = [spec.host_link_bps] * hpl + [spec.uplink_bps] * spec.spines
    spine_ports = [spec.uplink_bps] * spec.leaves
    leaves = [make_switch(i, buffer_bytes(kb_per_port_per_gbps, leaf_ports)) for i in range(spec.leaves)]
    spines = [make_switch(spec.leaves + j, buffer_bytes(kb_per_port_per_gbps, spine_ports))
              for j in range(spec.spines)]
    prop = spec.propagation_ns
    for leaf_idx, leaf in enumerate(leaves):
        for k in range(hpl):
            host = hosts[leaf_idx * hpl + k]
            host.connect(spec.host_link_bps, prop, leaf)
            leaf.add_port(spec.host_link_bps, prop, host)
        for sp in spines:
            leaf.add_port(spec.uplink_bps, prop, sp)
    for sp in spines:
        for leaf in leaves:
            sp.add_port(spec.uplink_bps, prop, leaf)
    return Network(sim, spec, hosts, leaves, spines, ecmp_salt)
