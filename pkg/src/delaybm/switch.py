"""Shared-memory output-queued switch."""

from __future__ import annotations

from collections import deque
from fractions import Fraction
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

from .policies import DEQUEUE_DELAY, ConfigError, Policy, as_fraction
from .sim import NS_PER_S, Simulator

MTU = 1500
HEADER = 60
MSS = MTU - HEADER


class Packet:
    __slots__ = ("flow", "seq", "payload", "size", "priority", "ecn_capable", "ecn_marked",
                 "enqueue_time", "first_rtt", "sent_at", "route", "hop")

    def __init__(self, flow, seq: int, payload: int, priority: int = 0, ecn_capable: bool = False,
                 first_rtt: bool = False, sent_at: int = 0, route: Sequence = (), size: Optional[int] = None):
        self.flow = flow
        self.seq = seq
        self.payload = payload
        self.size = payload + HEADER if size is None else size
        self.priority = priority
        self.ecn_capable = ecn_capable
        self.ecn_marked = False
        self.enqueue_time = -1
        self.first_rtt = first_rtt
        self.sent_at = sent_at
        self.route = route
        self.hop = 1


def serialization_ns(size: int, bps: int) -> int:
    return size * 8 * NS_PER_S // bps


class EgressQueue:
    __slots__ = ("port", "priority", "fifo", "byte_len", "alpha", "port_Bps", "congested",
                 "drain_rate", "window_tx_bytes", "flow_table",
                 "arrived", "enqueued", "admission_dropped", "transmitted", "dequeue_dropped")

    def __init__(self, port: int, priority: int, alpha: Fraction, port_Bps: int):
        self.port = port
        self.priority = priority
        self.fifo: Deque[Packet] = deque()
        self.byte_len = 0
        self.alpha = alpha
        self.port_Bps = port_Bps
        self.congested = False
        self.drain_rate = Fraction(1)
        self.window_tx_bytes = 0
        self.flow_table: Dict[int, int] = {}
        self.arrived = 0
        self.enqueued = 0
        self.admission_dropped = 0
        self.transmitted = 0
        self.dequeue_dropped = 0


class Port:
    __slots__ = ("index", "bps", "prop_ns", "peer", "queues", "busy", "rr", "backlog",
                 "tx_bytes", "tx_log", "ecn_k")

    def __init__(self, index: int, bps: int, prop_ns: int, peer, queues: List[EgressQueue], ecn_k: int):
        self.index = index
        self.bps = bps
        self.prop_ns = prop_ns
        self.peer = peer
        self.queues = queues
        self.busy = False
        self.rr = 0
        self.backlog = 0  # packets across all queues of the port
        self.tx_bytes = 0
        self.tx_log: Optional[List[Tuple[int, int, int]]] = None
        self.ecn_k = ecn_k


def ecn_threshold_bytes(bps: int, packets_at_10g: int = 65) -> int:
    """Marking threshold K, scaled linearly with port speed."""
    return packets_at_10g * MTU * bps // 10_000_000_000


def mark_ecn(pkt: Packet, queue_byte_len: int, k: int) -> Packet:
    """Instantaneous marking: set CE when the queue already holds >= K bytes."""
    if pkt.ecn_capable and queue_byte_len >= k:
        pkt.ecn_marked = True
    return pkt


DropSink = Callable[[int, int, int, int, str], None]


class SharedBufferSwitch:
    """Output-queued switch with one shared buffer of ``total_B`` bytes.

    ``alphas`` maps priority class to alpha; one queue per (port, class).
    Ports are added with :meth:`add_port` before traffic starts.
    """

    def __init__(self, sim: Simulator, switch_id: int, total_B: int, policy: Policy,
                 alphas: Dict[int, Fraction], update_period_ns: int = 80_000,
                 congestion_fraction: Fraction = Fraction(9, 10), congestion_reference: str = "threshold",
                 ecn_k_packets: int = 65, on_drop: Optional[DropSink] = None):
        if total_B <= 0:
            raise ConfigError("total buffer must be positive")
        if congestion_reference not in ("threshold", "buffer"):
            raise ConfigError(f"unknown congestion reference {congestion_reference!r}")
        self.sim = sim
        self.id = switch_id
        self.total_B = total_B
        self.occupied = 0
        self.policy = policy
        self.alphas = {p: as_fraction(a) for p, a in sorted(alphas.items())}
        self.priorities = list(self.alphas)
        if self.priorities != list(range(len(self.priorities))):
            raise ConfigError("priority classes must be 0..P-1")
        self.ports: List[Port] = []
        self.queues: List[EgressQueue] = []
        self.c: List[int] = [0] * len(self.priorities)
        self.update_period = update_period_ns
        self.last_update = 0
        self.congestion_fraction = as_fraction(congestion_fraction)
        self.congestion_reference = congestion_reference
        self.ecn_k_packets = ecn_k_packets
        self.on_drop = on_drop
        self.drop_counts: Dict[str, int] = {}

    # ------------------------------------------------------------ building

    def add_port(self, bps: int, prop_ns: int, peer) -> Port:
        if bps <= 0:
            raise ConfigError("link capacity must be positive")
        idx = len(self.ports)
        qs = [EgressQueue(idx, p, self.alphas[p], bps // 8) for p in self.priorities]
        port = Port(idx, bps, prop_ns, peer, qs, ecn_threshold_bytes(bps, self.ecn_k_packets))
        self.ports.append(port)
        self.queues.extend(qs)
        return port

    def queue(self, port: int, priority: int) -> EgressQueue:
        try:
            return self.ports[port].queues[priority]
        except IndexError:
            raise ConfigError(f"switch {self.id}: no queue for port {port} priority {priority}") from None

    # ------------------------------------------------------------ data path

    def receive(self, pkt: Packet) -> None:
        port_idx = pkt.route[pkt.hop][1]
        pkt.hop += 1
        self.enqueue(pkt, port_idx, pkt.priority)

    def enqueue(self, pkt: Packet, port_idx: int, priority: int) -> bool:
        now = self.sim.now
        if now - self.last_update >= self.update_period:
            self.refresh_congested_counts(now)
        port = self.ports[port_idx]
        try:
            q = port.queues[priority]
        except IndexError:
            raise ConfigError(f"switch {self.id}: no queue for port {port_idx} priority {priority}") from None
        q.arrived += 1
        reason = self.policy.admit(self, q, pkt)
        if reason is not None:
            q.admission_dropped += 1
            self._drop(q, reason)
            return False
        if pkt.ecn_capable:
            mark_ecn(pkt, q.byte_len, port.ecn_k)
        pkt.enqueue_time = now
        q.fifo.append(pkt)
        q.byte_len += pkt.size
        q.enqueued += 1
        self.occupied += pkt.size
        port.backlog += 1
        self.policy.on_enqueue(q, pkt)
        if not port.busy:
            self._start_tx(port)
        return True

    def dequeue(self, port: Port) -> Optional[Packet]:
        """Round-robin over the port's queues, dropping stale heads.

        One pass pops at most one head per queue. Passes repeat until a
        packet is accepted for transmission or the port is empty.
        """
        now = self.sim.now
        if now - self.last_update >= self.update_period:
            self.refresh_congested_counts(now)
        queues = port.queues
        n = len(queues)
        policy = self.policy
        check = policy.checks_dequeue
        while port.backlog:
            start = port.rr
            for k in range(n):
                idx = (start + k) % n
                q = queues[idx]
                if not q.fifo:
                    continue
                pkt = q.fifo.popleft()
                q.byte_len -= pkt.size
                self.occupied -= pkt.size
                port.backlog -= 1
                policy.on_leave(q, pkt)
                if not check or policy.transmit_ok(self, q, pkt):
                    port.rr = (idx + 1) % n
                    q.transmitted += 1
                    q.window_tx_bytes += pkt.size
                    return pkt
                q.dequeue_dropped += 1
                self._drop(q, DEQUEUE_DELAY)
        return None

    def _start_tx(self, port: Port) -> None:
        pkt = self.dequeue(port)
        if pkt is None:
            port.busy = False
            return
        port.busy = True
        sim = self.sim
        ser = pkt.size * 8 * NS_PER_S // port.bps
        port.tx_bytes += pkt.size
        if port.tx_log is not None:
            port.tx_log.append((sim.now, sim.now + ser, pkt.size))
        sim.schedule(sim.now + ser, self._start_tx, port)
        sim.schedule(sim.now + ser + port.prop_ns, port.peer.receive, pkt)

    def _drop(self, q: EgressQueue, reason: str) -> None:
        self.drop_counts[reason] = self.drop_counts.get(reason, 0) + 1
        if self.on_drop is not None:
            self.on_drop(self.sim.now, self.id, q.port, q.priority, reason)

    # ------------------------------------------------------------ tracker

    def refresh_congested_counts(self, now: int) -> List[int]:
        """Recount congested queues per priority; no-op within one period."""
        if now - self.last_update < self.update_period:
            return self.c
        window = now - self.last_update
        self.last_update = now
        frac = self.congestion_fraction
        counts = [0] * len(self.priorities)
        for q in self.queues:
            if self.congestion_reference == "threshold":
                ref = self.policy.byte_threshold(self, q)
            else:
                ref = self.total_B
            # byte_len >= fraction * ref; an empty queue is never congested
            q.congested = q.byte_len > 0 and q.byte_len * frac.denominator >= frac.numerator * ref
            if q.congested:
                counts[q.priority] += 1
        self.c = counts
        self.policy.refresh(self, window)
        return counts

    # ------------------------------------------------------------ checks

    def check_conservation(self) -> None:
        total = sum(q.byte_len for q in self.queues)
        assert total == self.occupied, (total, self.occupied)
        assert 0 <= self.occupied <= self.total_B
        for q in self.queues:
            assert q.byte_len == sum(p.size for p in q.fifo)
