"""Steady-state closed forms for the delay-driven policy, and checks of
simulated runs against them.

All closed forms use :class:`fractions.Fraction`, so identities such as
``occupied + remaining == B`` hold exactly rather than to a tolerance.

Units: ``omega_bytes`` is the per-queue allocation in bytes. The same
quantity expressed as a delay threshold is ``omega_time = omega_bytes / C``
(seconds); the delay threshold formula naturally yields the time form, and
multiplying by port capacity converts it to a queue length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .policies import as_fraction

QueueId = Tuple[int, int]  # (port, priority)


@dataclass(frozen=True)
class SteadyStateInputs:
    total_B: int
    port_capacity_C: int  # bytes per second
    alphas: Mapping[int, Fraction]  # every priority using the buffer
    congested: Mapping[int, Sequence[int]] = field(default_factory=dict)  # priority -> congested ports

    def __post_init__(self):
        for p, a in self.alphas.items():
            if as_fraction(a) <= 0:
                raise ValueError(f"alpha for priority {p} must be positive")
        for p in self.congested:
            if p not in self.alphas:
                raise ValueError(f"congested priority {p} has no alpha")

    def alpha(self, p: int) -> Fraction:
        return as_fraction(self.alphas[p])

    def c(self, p: int) -> int:
        return len(self.congested.get(p, ()))

    def congested_queues(self) -> List[QueueId]:
        return [(port, p) for p in sorted(self.congested) for port in self.congested[p]]


@dataclass(frozen=True)
class SteadyStateReport:
    delta: Dict[QueueId, Fraction]
    occupied: Fraction
    remaining: Fraction
    omega_bytes: Dict[QueueId, Fraction]
    omega_time: Dict[QueueId, Fraction]  # seconds
    min_guarantee: Dict[int, Fraction]
    monopoly_cap: Dict[int, Fraction]
    drain_bound: Dict[int, Fraction]  # seconds

    def priority_allocation(self, p: int) -> Fraction:
        return sum((w for (port, q), w in self.omega_bytes.items() if q == p), Fraction(0))


def delta(alpha_p, c_p: int) -> Fraction:
    if c_p < 1:
        raise ValueError("c_p must be >= 1 for a congested queue")
    return as_fraction(alpha_p) / c_p


def delta_sum(inputs: SteadyStateInputs) -> Fraction:
    return sum((delta(inputs.alpha(p), inputs.c(p)) for _, p in inputs.congested_queues()), Fraction(0))


def isolation_bounds(inputs: SteadyStateInputs, p: int) -> Tuple[Fraction, Fraction]:
    """(minimum guaranteed bytes, monopoly cap in bytes) for priority p."""
    a = inputs.alpha(p)
    total_alpha = sum((inputs.alpha(q) for q in inputs.alphas), Fraction(0))
    B = inputs.total_B
    return B * a / (1 + total_alpha), B * a / (1 + a)


def drain_time_bound(inputs: SteadyStateInputs, p: int) -> Fraction:
    """Upper bound on a priority-p queue's drain time, in seconds."""
    a = inputs.alpha(p)
    return inputs.total_B * a / (inputs.port_capacity_C * (1 + a))


def steady_state(inputs: SteadyStateInputs) -> SteadyStateReport:
    B = inputs.total_B
    queues = inputs.congested_queues()
    deltas = {qid: delta(inputs.alpha(qid[1]), inputs.c(qid[1])) for qid in queues}
    s = sum(deltas.values(), Fraction(0))
    omega = {qid: B * d / (1 + s) for qid, d in deltas.items()}
    C = inputs.port_capacity_C
    return SteadyStateReport(
        delta=deltas,
        occupied=B * s / (1 + s),
        remaining=Fraction(B) / (1 + s),
        omega_bytes=omega,
        omega_time={qid: w / C for qid, w in omega.items()},
        min_guarantee={p: isolation_bounds(inputs, p)[0] for p in inputs.alphas},
        monopoly_cap={p: isolation_bounds(inputs, p)[1] for p in inputs.alphas},
        drain_bound={p: drain_time_bound(inputs, p) for p in inputs.alphas},
    )


# ---------------------------------------------------------------- cross-check

@dataclass
class SteadyTrace:
    """Measurements from a persistent-congestion run.

    ``samples`` holds (time_ns, occupied_bytes, {queue: byte_len}).
    ``max_sojourn`` holds, per sample interval ending at that time, the
    largest sojourn time (ns) among packets accepted for transmission.
    """

    scheme: str
    total_B: int
    packet_size: int
    capacity_bps: int
    rtt_ns: int
    samples: List[Tuple[int, int, Dict[QueueId, int]]] = field(default_factory=list)
    max_sojourn: List[Tuple[int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class Tolerances:
    relative: float = 0.05  # occupancy vs. closed form
    stability: float = 0.02  # steady-state detection band
    windows: int = 10  # detection window, in RTTs
    isolation_slack_bytes: int = 3 * 1500  # three MTUs


@dataclass
class CheckResult:
    name: str
    status: str  # pass | fail | n/a
    measured: Optional[float] = None
    expected: Optional[float] = None
    detail: str = ""

    def line(self) -> str:
        bits = [f"{self.name}: {self.status.upper()}"]
        if self.measured is not None:
            bits.append(f"measured={self.measured:.6g}")
        if self.expected is not None:
            bits.append(f"expected={self.expected:.6g}")
        if self.detail:
            bits.append(self.detail)
        return "  ".join(bits)


@dataclass
class CrossCheckReport:
    outcome: str  # "checked" | "not applicable" | "no steady state detected"
    checks: List[CheckResult] = field(default_factory=list)
    steady_from_ns: Optional[int] = None

    @property
    def passed(self) -> bool:
        return self.outcome == "checked" and all(c.status == "pass" for c in self.checks)

    def to_text(self) -> str:
        lines = [f"outcome: {self.outcome}"]
        if self.steady_from_ns is not None:
            lines.append(f"steady state from t={self.steady_from_ns}ns")
        lines += [c.line() for c in self.checks]
        return "\n".join(lines)


def detect_steady_state(samples: Sequence[Tuple[int, int]], window_ns: int, band: float) -> Optional[int]:
    """Index of the first sample that opens a window whose occupancy spread
    (max - min) stays within ``band`` of its mean, with every later window
    also within the band; None when no such point exists."""
    if not samples:
        return None
    times = [t for t, _ in samples]
    vals = [v for _, v in samples]
    n = len(samples)
    stable = [False] * n
    j = 0
    for i in range(n):
        if j < i:
            j = i
        while j + 1 < n and times[j + 1] - times[i] <= window_ns:
            j += 1
        if times[j] - times[i] < window_ns:
            break  # not a full window left
        w = vals[i:j + 1]
        mean = sum(w) / len(w)
        stable[i] = mean > 0 and (max(w) - min(w)) <= band * mean
    # last index whose window is unstable
    last_full = max((i for i in range(n) if times[-1] - times[i] >= window_ns), default=-1)
    if last_full < 0:
        return None
    for i in range(last_full, -1, -1):
        if not stable[i]:
            return i + 1 if i + 1 <= last_full else None
    return 0


def cross_check(trace: SteadyTrace, inputs: SteadyStateInputs, tol: Tolerances = Tolerances()) -> CrossCheckReport:
    if trace.scheme != "delay-bm":
        return CrossCheckReport("not applicable", [CheckResult("all", "n/a", detail=f"scheme {trace.scheme}")])
    occ = [(t, q) for t, q, _ in trace.samples]
    start = detect_steady_state(occ, tol.windows * trace.rtt_ns, tol.stability)
    if start is None:
        return CrossCheckReport("no steady state detected")
    t0 = trace.samples[start][0]
    steady = trace.samples[start:]
    rep = steady_state(inputs)
    B = inputs.total_B
    mean_q = sum(q for _, q, _ in steady) / len(steady)
    checks: List[CheckResult] = []

    def rel(name, measured, expected, tolerance=tol.relative):
        expected_f = float(expected)
        err = abs(measured - expected_f) / expected_f if expected_f else abs(measured)
        status = "pass" if err <= tolerance else "fail"
        checks.append(CheckResult(name, status, measured, expected_f, f"rel_err={err:.4%} tol={tolerance:.2%}"))

    rel("occupancy", mean_q, rep.occupied)
    rel("remaining", B - mean_q, rep.remaining)
    for qid, omega in rep.omega_bytes.items():
        mean_len = sum(lens.get(qid, 0) for _, _, lens in steady) / len(steady)
        rel(f"allocation port={qid[0]} prio={qid[1]}", mean_len, omega)
    slack = tol.isolation_slack_bytes
    for p in sorted(inputs.congested):
        alloc = sum(sum(v for (port, q), v in lens.items() if q == p) for _, _, lens in steady) / len(steady)
        lo = float(rep.min_guarantee[p]) - slack
        hi = float(rep.monopoly_cap[p]) + slack
        checks.append(CheckResult(f"min-guarantee prio={p}", "pass" if alloc >= lo else "fail",
                                  alloc, float(rep.min_guarantee[p]), f"slack={slack}B"))
        checks.append(CheckResult(f"monopoly-cap prio={p}", "pass" if alloc <= hi else "fail",
                                  alloc, float(rep.monopoly_cap[p]), f"slack={slack}B"))
    ser_ns = trace.packet_size * 8 * 1_000_000_000 // trace.capacity_bps
    steady_sojourn = [s for t, s in trace.max_sojourn if t > t0]
    if steady_sojourn:
        worst = max(steady_sojourn)
        for p in sorted(inputs.congested):
            bound_ns = float(rep.drain_bound[p] * 1_000_000_000)
            checks.append(CheckResult(f"drain-time prio={p}", "pass" if worst <= bound_ns + ser_ns else "fail",
                                      worst, bound_ns, f"+{ser_ns}ns quantum"))
    return CrossCheckReport("checked", checks, t0)
