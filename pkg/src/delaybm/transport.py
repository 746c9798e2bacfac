"""Window-based flow endpoints: DCTCP and loss-based AIMD.

A :class:`Flow` holds both the sender and the receiver state. Data packets go
through the switches; ACKs return to the sender after a fixed reverse-path
latency (serialization of a 64-byte ACK plus propagation on every hop).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from .sim import NS_PER_S, Simulator
from .switch import HEADER, MSS, MTU, Packet

ACK_SIZE = 64
TRANSPORTS = ("dctcp", "aimd")


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransportParams:
    kind: str = "dctcp"
    init_cwnd_pkts: int = 10
    dctcp_g: float = 1 / 16
    min_rto_ns: int = 1_000_000
    max_rto_ns: int = 100_000_000
    dupack_threshold: int = 3

    def __post_init__(self):
        if self.kind not in TRANSPORTS:
            raise TransportError(f"unknown transport {self.kind!r}; expected one of {', '.join(TRANSPORTS)}")

    @property
    def ecn_capable(self) -> bool:
        return self.kind == "dctcp"


def _ser(size: int, bps: int) -> int:
    return size * 8 * NS_PER_S // bps


def ack_latency(links: List[Tuple[int, int]], ack_size: int = ACK_SIZE) -> int:
    return sum(_ser(ack_size, c) + prop for c, prop in links)


def base_rtt(links: List[Tuple[int, int]], pkt_size: int = MTU, ack_size: int = ACK_SIZE) -> int:
    """One MTU packet forward plus its ACK back, no queueing."""
    return sum(_ser(pkt_size, c) + prop for c, prop in links) + ack_latency(links, ack_size)


def segment_sizes(size: int, mss: int = MSS) -> List[int]:
    if size <= 0:
        return []
    n, rem = divmod(size, mss)
    return [mss] * n + ([rem] if rem else [])


def ideal_fct(size: int, links: List[Tuple[int, int]], mss: int = MSS, header: int = HEADER,
              ack_size: int = ACK_SIZE) -> int:
    """Completion time of ``size`` bytes on an otherwise idle path.

    The first link with the smallest capacity is the bottleneck: the first
    packet is store-and-forwarded up to it, the bottleneck is then busy for
    the whole flow, and the last packet is store-and-forwarded after it.
    The ACK for the last byte then returns to the sender.
    """
    segs = segment_sizes(size, mss)
    if not segs:
        return base_rtt(links, pkt_size=header, ack_size=ack_size)  # one empty segment and its ACK
    props = sum(p for _, p in links)
    back = ack_latency(links, ack_size)
    wire_first = segs[0] + header
    wire_last = segs[-1] + header
    caps = [c for c, _ in links]
    b = caps.index(min(caps))
    t = sum(_ser(wire_first, c) for c in caps[:b])
    n_full = len(segs) - 1
    t += n_full * _ser(mss + header, caps[b]) + _ser(wire_last, caps[b])
    t += sum(_ser(wire_last, c) for c in caps[b + 1:])
    return t + props + back


@dataclass
class FlowRecord:
    flow_id: int
    size: int
    start: int
    finish: int
    ideal_fct: int
    klass: str = ""
    priority: int = 0

    @property
    def fct(self) -> int:
        return self.finish - self.start

    @property
    def slowdown(self) -> float:
        return self.fct / self.ideal_fct if self.ideal_fct > 0 else float("nan")


class Flow:
    """One unidirectional transfer of ``size`` bytes."""

    def __init__(self, sim: Simulator, flow_id: int, src, dst, size: int, route, links: List[Tuple[int, int]],
                 params: TransportParams, priority: int = 0, first_rtt_class: Optional[int] = None,
                 klass: str = "", on_finish: Optional[Callable[["Flow"], None]] = None):
        if size <= 0:
            raise TransportError("flow size must be positive")
        self.sim = sim
        self.id = flow_id
        self.src = src
        self.dst = dst
        self.size = size
        self.route = route
        self.links = links
        self.params = params
        self.priority = priority
        self.first_rtt_class = first_rtt_class
        self.klass = klass
        self.on_finish = on_finish
        self.ack_delay = ack_latency(links)
        self.base_rtt = base_rtt(links)
        self.ideal = ideal_fct(size, links)
        self.start_time = -1
        self.finish_time = -1
        # sender
        self.snd_una = 0
        self.snd_nxt = 0
        self.cwnd = params.init_cwnd_pkts * MSS
        self.ssthresh = 1 << 62
        self.dupacks = 0
        self.in_recovery = False
        self.recover = 0
        self.srtt = 0
        self.rttvar = 0
        self.rto = params.min_rto_ns
        self.rto_deadline = 0
        self.rto_pending = False
        self.dctcp_alpha = 0.0
        self.win_end = 0
        self.win_acked = 0
        self.win_marked = 0
        self.retransmits = 0
        self.timeouts = 0
        # receiver
        self.rcv_nxt = 0
        self.ooo: Dict[int, int] = {}
        self.delivered = 0

    # ------------------------------------------------------------ sender

    @property
    def done(self) -> bool:
        return self.finish_time >= 0

    def start(self) -> None:
        self.start_time = self.sim.now
        self.win_end = 0
        self._send_allowed()
        self._arm_rto()

    def tag_first_rtt(self, pkt: Packet) -> Packet:
        now = self.sim.now
        pkt.first_rtt = self.base_rtt > 0 and now < self.start_time + self.base_rtt
        if pkt.first_rtt and self.first_rtt_class is not None:
            pkt.priority = self.first_rtt_class
        return pkt

    def _transmit(self, seq: int) -> None:
        payload = min(MSS, self.size - seq)
        pkt = Packet(self, seq, payload, self.priority, self.params.ecn_capable,
                     sent_at=self.sim.now, route=self.route)
        self.tag_first_rtt(pkt)
        self.src.send(pkt)

    def _send_allowed(self) -> None:
        size = self.size
        while self.snd_nxt < size and self.snd_nxt - self.snd_una < self.cwnd:
            self._transmit(self.snd_nxt)
            self.snd_nxt = min(size, self.snd_nxt + MSS)

    def on_ack(self, ack: int, ece: bool, echo_ts: int) -> None:
        if self.done:
            return
        if ack > self.size:
            raise TransportError(f"flow {self.id}: ack {ack} beyond size {self.size}")
        now = self.sim.now
        self._rtt_sample(now - echo_ts)
        if ack > self.snd_una:
            newly = ack - self.snd_una
            self.snd_una = ack
            if self.snd_nxt < ack:
                self.snd_nxt = ack
            self.dupacks = 0
            self._on_new_ack(newly, ece)
            if ack >= self.size:
                self._finish()
                return
            self.rto_deadline = now + self.rto
        elif self.snd_nxt > self.snd_una:
            self.dupacks += 1
            if self.dupacks == self.params.dupack_threshold and not self.in_recovery:
                self.on_loss(self.snd_una)
        self._send_allowed()

    def _on_new_ack(self, newly: int, ece: bool) -> None:
        p = self.params
        if self.in_recovery:
            if self.snd_una >= self.recover:
                self.in_recovery = False
                self.cwnd = max(MSS, self.ssthresh)
            else:
                # partial ack: next hole
                self.retransmits += 1
                self._transmit(self.snd_una)
        elif self.cwnd < self.ssthresh:
            self.cwnd += newly
        else:
            self.cwnd += max(1, MSS * newly // self.cwnd)
        if p.kind == "dctcp":
            self.win_acked += newly
            if ece:
                self.win_marked += newly
            if self.snd_una >= self.win_end:
                self._dctcp_window_end()

    def _dctcp_window_end(self) -> None:
        g = self.params.dctcp_g
        frac = self.win_marked / self.win_acked if self.win_acked else 0.0
        self.dctcp_alpha = (1 - g) * self.dctcp_alpha + g * frac
        if self.win_marked and not self.in_recovery:
            self.cwnd = max(MSS, int(self.cwnd * (1 - self.dctcp_alpha / 2)))
            self.ssthresh = self.cwnd
        self.win_acked = 0
        self.win_marked = 0
        self.win_end = self.snd_nxt

    def on_loss(self, seq: int) -> None:
        """Fast retransmit after duplicate ACKs: halve and resend ``seq``."""
        flight = self.snd_nxt - self.snd_una
        self.ssthresh = max(2 * MSS, min(self.cwnd, flight) // 2)
        self.cwnd = self.ssthresh
        self.in_recovery = True
        self.recover = self.snd_nxt
        self.retransmits += 1
        self._transmit(seq)

    def _on_timeout(self) -> None:
        flight = self.snd_nxt - self.snd_una
        self.ssthresh = max(2 * MSS, flight // 2)
        self.cwnd = MSS
        self.in_recovery = False
        self.dupacks = 0
        self.snd_nxt = self.snd_una
        self.timeouts += 1
        self.retransmits += 1
        self.rto = min(2 * self.rto, self.params.max_rto_ns)
        self.win_end = self.snd_una
        self._send_allowed()

    def _rtt_sample(self, r: int) -> None:
        if self.srtt == 0:
            self.srtt = r
            self.rttvar = r // 2
        else:
            self.rttvar = (3 * self.rttvar + abs(self.srtt - r)) // 4
            self.srtt = (7 * self.srtt + r) // 8
        self.rto = min(self.params.max_rto_ns, max(self.params.min_rto_ns, self.srtt + 4 * self.rttvar))

    def _arm_rto(self) -> None:
        self.rto_deadline = self.sim.now + self.rto
        if not self.rto_pending:
            self.rto_pending = True
            self.sim.schedule(self.rto_deadline, self._rto_check)

    def _rto_check(self) -> None:
        self.rto_pending = False
        if self.done:
            return
        now = self.sim.now
        if now < self.rto_deadline:
            self.rto_pending = True
            self.sim.schedule(self.rto_deadline, self._rto_check)
            return
        self._on_timeout()
        self._arm_rto()

    def _finish(self) -> None:
        self.finish_time = self.sim.now
        if self.on_finish is not None:
            self.on_finish(self)

    def record(self) -> FlowRecord:
        return FlowRecord(self.id, self.size, self.start_time, self.finish_time, self.ideal,
                          self.klass, self.priority)

    # ------------------------------------------------------------ receiver

    def on_data(self, pkt: Packet) -> None:
        seq, n = pkt.seq, pkt.payload
        if seq == self.rcv_nxt:
            self.rcv_nxt += n
            self.delivered += n
            ooo = self.ooo
            while self.rcv_nxt in ooo:
                m = ooo.pop(self.rcv_nxt)
                self.rcv_nxt += m
                self.delivered += m
        elif seq > self.rcv_nxt and seq not in self.ooo:
            self.ooo[seq] = n
        sim = self.sim
        sim.schedule(sim.now + self.ack_delay, self.on_ack, self.rcv_nxt, pkt.ecn_marked, pkt.sent_at)
