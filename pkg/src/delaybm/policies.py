"""Buffer-management policies for the shared-memory switch.

Every threshold is computed in integer arithmetic (bytes, nanoseconds) and
rounded down. ``alpha`` values are carried as :class:`fractions.Fraction` so
that ``alpha = 0.5`` and ``alpha = 10**6`` are both exact.

The module exposes two layers:

* pure functions (``delay_threshold``, ``dt_admission_threshold`` ...) that
  evaluate one formula from a :class:`PolicyContext`;
* policy objects that the switch calls on its hot path. They evaluate the same
  formulas from raw integers to avoid allocating a context per packet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple, Union

if TYPE_CHECKING:  # pragma: no cover
    from .switch import EgressQueue, Packet, SharedBufferSwitch

NS_PER_S = 1_000_000_000

SCHEMES = ("delay-bm", "dt", "cs", "fab", "ib", "abm")

# drop reasons, as written to drops.csv
FULL_BUFFER = "full_buffer"
ADMISSION_THRESHOLD = "admission_threshold"
DEQUEUE_DELAY = "dequeue_delay"
FAIR_DROP = "fair_drop"


class ConfigError(ValueError):
    pass


def as_fraction(x: Union[int, float, str, Fraction]) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        if math.isinf(x):
            raise ConfigError("alpha must be finite")
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class PolicyContext:
    total_B: int
    occupied_Q: int
    port_capacity_C: int  # bytes per second
    priority_p: int
    alpha_p: Fraction
    c_p: int = 1
    queue_byte_len: int = 0
    now: int = 0

    def __post_init__(self):
        if not 0 <= self.occupied_Q <= self.total_B:
            raise ValueError(f"occupied {self.occupied_Q} outside [0, {self.total_B}]")
        if self.alpha_p <= 0:
            raise ValueError("alpha_p must be positive")
        if self.c_p < 1:
            raise ValueError("c_p must be floored to >= 1 before use")


# ---------------------------------------------------------------- formulas

def delay_threshold_ns(alpha: Fraction, free_bytes: int, c_p: int, capacity_Bps: int) -> int:
    """alpha * free / (c_p * C), in whole nanoseconds."""
    return (alpha.numerator * free_bytes * NS_PER_S) // (alpha.denominator * max(c_p, 1) * capacity_Bps)


def delay_threshold(ctx: PolicyContext) -> int:
    return delay_threshold_ns(ctx.alpha_p, ctx.total_B - ctx.occupied_Q, ctx.c_p, ctx.port_capacity_C)


def dt_threshold_bytes(alpha: Fraction, free_bytes: int) -> int:
    return (alpha.numerator * free_bytes) // alpha.denominator


def dt_admission_threshold(ctx: PolicyContext) -> int:
    return dt_threshold_bytes(ctx.alpha_p, ctx.total_B - ctx.occupied_Q)


def cs_admit(ctx: PolicyContext, size: int) -> bool:
    return ctx.occupied_Q + size <= ctx.total_B


def fab_admission_threshold(ctx: PolicyContext, flow_age_bytes: int,
                            cutoff: int = 100_000, boost: Fraction = Fraction(4)) -> int:
    alpha = ctx.alpha_p * boost if flow_age_bytes < cutoff else ctx.alpha_p
    return dt_threshold_bytes(alpha, ctx.total_B - ctx.occupied_Q)


def ib_admission(ctx: PolicyContext, size: int, flow_bytes: int, active_flows: int,
                 tolerance: Union[Fraction, float] = Fraction(2)) -> Optional[str]:
    """Drop reason or None. DT first, then approximate fair dropping."""
    if ctx.occupied_Q + size > ctx.total_B:
        return FULL_BUFFER
    if ctx.queue_byte_len + size > dt_admission_threshold(ctx):
        return ADMISSION_THRESHOLD
    if _unfair(flow_bytes, ctx.queue_byte_len, active_flows, tolerance):
        return FAIR_DROP
    return None


def _unfair(flow_bytes: int, queue_len: int, active_flows: int, tolerance) -> bool:
    if active_flows <= 0 or queue_len <= 0:
        return False
    if isinstance(tolerance, float) and math.isinf(tolerance):
        return False
    # flow_bytes / queue_len > tolerance / active_flows
    tol = as_fraction(tolerance)
    return flow_bytes * active_flows * tol.denominator > tol.numerator * queue_len


def abm_drain_rate(bytes_dequeued: int, window_ns: int, capacity_Bps: int,
                   mu_min: Fraction = Fraction(1, 100)) -> Fraction:
    """Dequeued bytes over one window, normalized to port capacity, floored."""
    if window_ns <= 0:
        return Fraction(1)
    mu = Fraction(bytes_dequeued * NS_PER_S, window_ns * capacity_Bps)
    return min(Fraction(1), max(mu_min, mu))


def abm_admission_threshold(ctx: PolicyContext, drain_rate: Fraction, n_p: Optional[int] = None) -> int:
    n = max(1, ctx.c_p if n_p is None else n_p)
    scale = ctx.alpha_p * drain_rate / n
    return dt_threshold_bytes(scale, ctx.total_B - ctx.occupied_Q)


# ---------------------------------------------------------------- policies

@dataclass
class Decision:
    time: int
    queue: Tuple[int, int, int]  # (switch, port, priority)
    threshold: int
    action: str


class Policy:
    """Base policy: complete sharing at admission, unconditional transmit."""

    name = "cs"
    checks_dequeue = False

    def __init__(self, trace: bool = False):
        self.trace: Optional[List[Decision]] = [] if trace else None

    def _log(self, sw: "SharedBufferSwitch", q: "EgressQueue", threshold: int, action: str) -> None:
        self.trace.append(Decision(sw.sim.now, (sw.id, q.port, q.priority), threshold, action))

    def admit(self, sw: "SharedBufferSwitch", q: "EgressQueue", pkt: "Packet") -> Optional[str]:
        if sw.occupied + pkt.size > sw.total_B:
            if self.trace is not None:
                self._log(sw, q, sw.total_B - sw.occupied, "drop")
            return FULL_BUFFER
        if self.trace is not None:
            self._log(sw, q, sw.total_B - sw.occupied, "admit")
        return None

    def transmit_ok(self, sw: "SharedBufferSwitch", q: "EgressQueue", pkt: "Packet") -> bool:
        return True

    def byte_threshold(self, sw: "SharedBufferSwitch", q: "EgressQueue") -> int:
        """Per-queue byte threshold used by the congested-queue tracker."""
        return dt_threshold_bytes(q.alpha, sw.total_B - sw.occupied)

    def on_enqueue(self, q: "EgressQueue", pkt: "Packet") -> None:
        pass

    def on_leave(self, q: "EgressQueue", pkt: "Packet") -> None:
        pass

    def refresh(self, sw: "SharedBufferSwitch", window_ns: int) -> None:
        pass


class CompleteSharing(Policy):
    name = "cs"


class DelayBM(Policy):
    """CS admission plus drop-after-dequeue on sojourn time."""

    name = "delay-bm"
    checks_dequeue = True

    def __init__(self, min_bytes: int = 1500, trace: bool = False):
        super().__init__(trace)
        self.min_bytes = min_bytes

    def threshold_ns(self, sw: "SharedBufferSwitch", q: "EgressQueue") -> int:
        return delay_threshold_ns(q.alpha, sw.total_B - sw.occupied, sw.c[q.priority], q.port_Bps)

    def transmit_ok(self, sw, q, pkt) -> bool:
        # q.byte_len no longer includes pkt
        theta = self.threshold_ns(sw, q)
        ok = sw.sim.now - pkt.enqueue_time < theta or q.byte_len < self.min_bytes
        if self.trace is not None:
            self._log(sw, q, theta, "transmit" if ok else "drop")
        return ok

    def byte_threshold(self, sw, q) -> int:
        return dt_threshold_bytes(q.alpha, sw.total_B - sw.occupied) // max(1, sw.c[q.priority])


class DynamicThreshold(Policy):
    name = "dt"

    def alpha_for(self, q: "EgressQueue", pkt: "Packet") -> Fraction:
        return q.alpha

    def threshold(self, sw, q, pkt) -> int:
        return dt_threshold_bytes(self.alpha_for(q, pkt), sw.total_B - sw.occupied)

    def admit(self, sw, q, pkt) -> Optional[str]:
        if sw.occupied + pkt.size > sw.total_B:
            if self.trace is not None:
                self._log(sw, q, 0, "drop")
            return FULL_BUFFER
        t = self.threshold(sw, q, pkt)
        if q.byte_len + pkt.size > t:
            if self.trace is not None:
                self._log(sw, q, t, "drop")
            return ADMISSION_THRESHOLD
        if self.trace is not None:
            self._log(sw, q, t, "admit")
        return None


class FlowAwareBuffering(DynamicThreshold):
    """DT with a boosted alpha for packets early in their flow."""

    name = "fab"

    def __init__(self, cutoff: int = 100_000, boost: Fraction = Fraction(4), trace: bool = False):
        super().__init__(trace)
        self.cutoff = cutoff
        self.boost = as_fraction(boost)

    def alpha_for(self, q, pkt) -> Fraction:
        return q.alpha * self.boost if pkt.seq < self.cutoff else q.alpha


class IntelligentBuffering(DynamicThreshold):
    """DT admission, then approximate fair dropping over a bounded flow table."""

    name = "ib"

    def __init__(self, tolerance=Fraction(2), table_size: int = 64, trace: bool = False):
        super().__init__(trace)
        self.tolerance = tolerance
        self.table_size = table_size

    def admit(self, sw, q, pkt) -> Optional[str]:
        reason = super().admit(sw, q, pkt)
        if reason is not None:
            return reason
        table: Dict[int, int] = q.flow_table
        if _unfair(table.get(pkt.flow.id, 0), q.byte_len, len(table), self.tolerance):
            if self.trace is not None:
                # overwrite the DT "admit" record: the hierarchy dropped it
                self.trace[-1] = Decision(self.trace[-1].time, self.trace[-1].queue,
                                          self.trace[-1].threshold, "drop")
            return FAIR_DROP
        return None

    def on_enqueue(self, q, pkt) -> None:
        table = q.flow_table
        fid = pkt.flow.id
        if fid in table:
            table[fid] += pkt.size
            return
        if len(table) >= self.table_size:
            victim = min(table, key=table.__getitem__)  # first-inserted wins ties
            del table[victim]
        table[fid] = pkt.size

    def on_leave(self, q, pkt) -> None:
        table = q.flow_table
        fid = pkt.flow.id
        if fid in table:
            left = table[fid] - pkt.size
            if left > 0:
                table[fid] = left
            else:
                del table[fid]


class ActiveBufferManagement(DynamicThreshold):
    """alpha / n_p * normalized drain rate * free buffer.

    The drain rate of a congested queue is measured once per update period;
    queues that are not congested are treated as draining at line rate.
    """

    name = "abm"

    def __init__(self, mu_min: Fraction = Fraction(1, 100), force_mu: Optional[Fraction] = None,
                 force_n: Optional[int] = None, trace: bool = False):
        super().__init__(trace)
        self.mu_min = as_fraction(mu_min)
        self.force_mu = force_mu
        self.force_n = force_n

    def _scale(self, sw, q) -> Fraction:
        mu = q.drain_rate if self.force_mu is None else self.force_mu
        n = sw.c[q.priority] if self.force_n is None else self.force_n
        return q.alpha * mu / max(1, n)

    def threshold(self, sw, q, pkt) -> int:
        return dt_threshold_bytes(self._scale(sw, q), sw.total_B - sw.occupied)

    def byte_threshold(self, sw, q) -> int:
        return dt_threshold_bytes(self._scale(sw, q), sw.total_B - sw.occupied)

    def refresh(self, sw, window_ns: int) -> None:
        for q in sw.queues:
            if q.congested:
                q.drain_rate = abm_drain_rate(q.window_tx_bytes, window_ns, q.port_Bps, self.mu_min)
            else:
                q.drain_rate = Fraction(1)
            q.window_tx_bytes = 0


def make_policy(name: str, params: Optional[dict] = None, trace: bool = False) -> Policy:
    p = dict(params or {})
    if name == "delay-bm":
        return DelayBM(min_bytes=int(p.get("min_bytes", 1500)), trace=trace)
    if name == "dt":
        return DynamicThreshold(trace=trace)
    if name == "cs":
        return CompleteSharing(trace=trace)
    if name == "fab":
        return FlowAwareBuffering(cutoff=int(p.get("fab_cutoff_bytes", 100_000)),
                                  boost=as_fraction(p.get("fab_boost", 4)), trace=trace)
    if name == "ib":
        tol = p.get("ib_tolerance", 2)
        tol = tol if isinstance(tol, float) and math.isinf(tol) else as_fraction(tol)
        return IntelligentBuffering(tolerance=tol, table_size=int(p.get("ib_table_size", 64)), trace=trace)
    if name == "abm":
        return ActiveBufferManagement(mu_min=as_fraction(p.get("abm_mu_min", Fraction(1, 100))),
                                      force_mu=p.get("abm_force_mu"), force_n=p.get("abm_force_n"),
                                      trace=trace)
    raise ConfigError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEMES)}")
