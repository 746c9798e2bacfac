"""Persistent-congestion scenarios on a single shared-buffer switch.

Each saturated queue is fed by a constant-rate source slightly faster than
the port (``1 + overload`` times line rate), which is the operating point
the steady-state closed forms describe. Until the policy first pushes back
on a queue, its source runs at twice line rate so the queue fills quickly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .analytics import QueueId, SteadyStateInputs, SteadyTrace
from .policies import as_fraction, make_policy
from .sim import NS_PER_S, Simulator
from .switch import Packet, SharedBufferSwitch

FLUID_PACKET = 125
PACKET_MODE_PACKET = 1500


class _Source:
    __slots__ = ("id",)

    def __init__(self, i: int):
        self.id = i


class _Sink:
    """Swallows packets and records how long they waited in the switch."""

    def __init__(self, sim: Simulator, bps: int):
        self.sim = sim
        self.bps = bps
        self.window_max = 0
        self.received = 0

    def receive(self, pkt: Packet) -> None:
        ser = pkt.size * 8 * NS_PER_S // self.bps
        sojourn = self.sim.now - ser - pkt.enqueue_time
        if sojourn > self.window_max:
            self.window_max = sojourn
        self.received += pkt.size


@dataclass
class PersistentCongestion:
    total_B: int = 983_040
    capacity_bps: int = 10_000_000_000
    alphas: Dict[int, float] = field(default_factory=lambda: {0: 0.5})
    saturated: Sequence[QueueId] = ((0, 0),)  # (port, priority) fed above line rate
    n_ports: Optional[int] = None
    fluid: bool = False
    overload: float = 0.001
    warmup_ns: Optional[int] = None  # None: fill until the policy first drops from the queue
    duration_ns: int = 5_000_000
    update_period_ns: int = 20_000
    sample_period_ns: Optional[int] = None
    scheme: str = "delay-bm"
    min_bytes: int = 1500
    trickle: Sequence[Tuple[int, int, int, int]] = ()  # (port, priority, size, gap_ns) low-rate feeds

    @property
    def packet_size(self) -> int:
        return FLUID_PACKET if self.fluid else PACKET_MODE_PACKET

    def inputs(self) -> SteadyStateInputs:
        congested: Dict[int, List[int]] = {}
        for port, prio in self.saturated:
            congested.setdefault(prio, []).append(port)
        return SteadyStateInputs(self.total_B, self.capacity_bps // 8,
                                 {p: as_fraction(a) for p, a in self.alphas.items()}, congested)


@dataclass
class PersistentResult:
    trace: SteadyTrace
    switch: SharedBufferSwitch
    drops: List[Tuple[int, int, int, int, str]]


def run_persistent(cfg: PersistentCongestion) -> PersistentResult:
    sim = Simulator()
    drops: List[Tuple[int, int, int, int, str]] = []
    policy = make_policy(cfg.scheme, {"min_bytes": cfg.min_bytes})
    sw = SharedBufferSwitch(sim, 0, cfg.total_B, policy, {p: as_fraction(a) for p, a in cfg.alphas.items()},
                            update_period_ns=cfg.update_period_ns,
                            on_drop=lambda *rec: drops.append(rec))
    ports_needed = 1 + max([p for p, _ in cfg.saturated] + [p for p, *_ in cfg.trickle])
    n_ports = cfg.n_ports or ports_needed
    sinks = []
    for _ in range(n_ports):
        sink = _Sink(sim, cfg.capacity_bps)
        sw.add_port(cfg.capacity_bps, 0, sink)
        sinks.append(sink)

    size = cfg.packet_size
    ser = Fraction(size * 8 * NS_PER_S, cfg.capacity_bps)
    steady_gap = ser / (1 + as_fraction(cfg.overload))
    warm_gap = ser / 2
    route = ((None, 0), (sw, 0))

    def feed(src: _Source, port: int, prio: int, pkt_size: int, exact_t: Fraction, gap_fn) -> None:
        # exact_t keeps fractional pacing so the long-run rate is exact
        pkt = Packet(src, 0, pkt_size, prio, size=pkt_size, route=route)
        sw.enqueue(pkt, port, prio)
        exact_t += gap_fn(exact_t)
        nxt = max(sim.now, int(exact_t))
        if nxt < cfg.duration_ns:
            sim.schedule(nxt, feed, src, port, prio, pkt_size, exact_t, gap_fn)

    def make_gap(port: int, prio: int):
        q = sw.queue(port, prio)

        def gap(t: Fraction) -> Fraction:
            if cfg.warmup_ns is not None:
                return warm_gap if t < cfg.warmup_ns else steady_gap
            return steady_gap if q.dequeue_dropped or q.admission_dropped else warm_gap

        return gap

    for i, (port, prio) in enumerate(cfg.saturated):
        sim.schedule(0, feed, _Source(i), port, prio, size, Fraction(0), make_gap(port, prio))
    for j, (port, prio, tsize, tgap) in enumerate(cfg.trickle):
        sim.schedule(0, feed, _Source(1000 + j), port, prio, tsize, Fraction(0), lambda t, g=tgap: Fraction(g))

    period = cfg.sample_period_ns or max(1, cfg.update_period_ns // 4)
    trace = SteadyTrace(cfg.scheme, cfg.total_B, size, cfg.capacity_bps, cfg.update_period_ns)
    watched = sorted(set(cfg.saturated))

    def sample() -> None:
        lens = {qid: sw.queue(*qid).byte_len for qid in watched}
        trace.samples.append((sim.now, sw.occupied, lens))
        trace.max_sojourn.append((sim.now, max(s.window_max for s in sinks)))
        for s in sinks:
            s.window_max = 0
        if sim.now + period <= cfg.duration_ns:
            sim.schedule(sim.now + period, sample)

    sim.schedule(period, sample)
    sim.run_until(cfg.duration_ns)
    return PersistentResult(trace, sw, drops)
