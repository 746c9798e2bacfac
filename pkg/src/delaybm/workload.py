"""Traffic generation: web-search flows with Poisson arrivals, incast bursts."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .sim import NS_PER_S


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSizeCdf:
    points: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        pts = self.points
        if not pts:
            raise WorkloadError("empty CDF")
        for (s0, p0), (s1, p1) in zip(pts, pts[1:]):
            if s1 <= s0:
                raise WorkloadError(f"CDF sizes must be strictly increasing ({s0} then {s1})")
            if p1 < p0:
                raise WorkloadError(f"CDF probabilities must be non-decreasing ({p0} then {p1})")
        if abs(pts[-1][1] - 1.0) > 1e-12:
            raise WorkloadError(f"CDF must end at 1.0, got {pts[-1][1]}")
        if pts[0][1] < 0:
            raise WorkloadError("negative probability")

    @property
    def sizes(self) -> List[int]:
        return [s for s, _ in self.points]

    @property
    def probs(self) -> List[float]:
        return [p for _, p in self.points]

    def mean(self) -> float:
        """Mean of the piecewise-linear distribution (mass p0 sits at the first size)."""
        pts = self.points
        m = pts[0][0] * pts[0][1]
        for (s0, p0), (s1, p1) in zip(pts, pts[1:]):
            m += (s0 + s1) / 2 * (p1 - p0)
        return m

    @classmethod
    def from_text(cls, text: str) -> "FlowSizeCdf":
        pts = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise WorkloadError(f"line {lineno}: expected 'size_bytes cumulative_probability'")
            pts.append((int(float(parts[0])), float(parts[1])))
        return cls(tuple(pts))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "FlowSizeCdf":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def degenerate(cls, size: int) -> "FlowSizeCdf":
        return cls(((size, 1.0),))


def websearch_cdf() -> FlowSizeCdf:
    text = resources.files("delaybm").joinpath("data/websearch.cdf").read_text()
    return FlowSizeCdf.from_text(text)


def size_at(cdf: FlowSizeCdf, u: float) -> int:
    """Inverse CDF with linear interpolation between points."""
    sizes, probs = cdf.sizes, cdf.probs
    if u <= probs[0]:
        return sizes[0]
    i = bisect.bisect_left(probs, u)
    if i >= len(probs):
        return sizes[-1]
    p0, p1 = probs[i - 1], probs[i]
    s0, s1 = sizes[i - 1], sizes[i]
    if p1 == p0:
        return s1
    return int(round(s0 + (s1 - s0) * (u - p0) / (p1 - p0)))


def sample_flow_size(cdf: FlowSizeCdf, rng: np.random.Generator) -> int:
    return size_at(cdf, float(rng.random()))


@dataclass(frozen=True)
class LoadSpec:
    target_load: float
    capacity_bps: int  # aggregate capacity the load is a fraction of

    def __post_init__(self):
        if not 0 < self.target_load < 1:
            raise WorkloadError(f"target load must lie in (0, 1), got {self.target_load}")
        if self.capacity_bps <= 0:
            raise WorkloadError("capacity must be positive")

    def arrival_rate(self, mean_size: float) -> float:
        """Flows per second."""
        return self.target_load * self.capacity_bps / 8 / mean_size


@dataclass(frozen=True)
class FlowArrival:
    time: int
    src: int
    dst: int
    size: int


def schedule_poisson_arrivals(load: LoadSpec, cdf: FlowSizeCdf, n_hosts: int, rng: np.random.Generator,
                              horizon_ns: int, min_size: int = 1) -> List[FlowArrival]:
    """Exponential interarrivals; endpoints uniform over distinct hosts."""
    if n_hosts < 2:
        raise WorkloadError("need at least two hosts")
    lam = load.arrival_rate(cdf.mean())
    mean_gap_ns = NS_PER_S / lam
    out: List[FlowArrival] = []
    t = 0.0
    while True:
        t += float(rng.exponential(mean_gap_ns))
        if t >= horizon_ns:
            break
        src = int(rng.integers(n_hosts))
        dst = int(rng.integers(n_hosts - 1))
        if dst >= src:
            dst += 1
        size = max(min_size, sample_flow_size(cdf, rng))
        out.append(FlowArrival(int(t), src, dst, size))
    return out


@dataclass(frozen=True)
class IncastSpec:
    fanout: int = 8
    request_fraction: float = 0.3
    requests_per_second: float = 2.0  # per server
    cross_leaf: bool = True

    def __post_init__(self):
        if self.fanout < 2:
            raise WorkloadError(f"incast fanout must be >= 2, got {self.fanout}")
        if not 0 < self.request_fraction <= 1:
            raise WorkloadError(f"request fraction must lie in (0, 1], got {self.request_fraction}")
        if self.requests_per_second < 0:
            raise WorkloadError("request rate must be non-negative")

    def response_bytes(self, buffer_B: int) -> int:
        return int(self.request_fraction * buffer_B) // self.fanout


@dataclass(frozen=True)
class IncastRequest:
    time: int
    aggregator: int
    responders: Tuple[int, ...]
    response_bytes: int


def pick_responders(aggregator: int, fanout: int, n_hosts: int, hosts_per_leaf: int,
                    rng: np.random.Generator, cross_leaf: bool = True) -> Tuple[int, ...]:
    agg_leaf = aggregator // hosts_per_leaf
    pool = [h for h in range(n_hosts) if h != aggregator and (not cross_leaf or h // hosts_per_leaf != agg_leaf)]
    if len(pool) < fanout:
        pool = [h for h in range(n_hosts) if h != aggregator]
    if len(pool) < fanout:
        raise WorkloadError(f"fanout {fanout} exceeds the {len(pool)} available responders")
    picks = rng.choice(len(pool), size=fanout, replace=False)
    return tuple(pool[int(i)] for i in picks)


def generate_incast(spec: IncastSpec, buffer_B: int, rng: np.random.Generator, n_hosts: int,
                    hosts_per_leaf: int, horizon_ns: int) -> List[IncastRequest]:
    """Poisson request stream at ``n_hosts * rate``; aggregators round-robin."""
    total_rate = spec.requests_per_second * n_hosts
    each = spec.response_bytes(buffer_B)
    if total_rate <= 0 or each <= 0:
        return []
    mean_gap_ns = NS_PER_S / total_rate
    out: List[IncastRequest] = []
    t = 0.0
    k = 0
    while True:
        t += float(rng.exponential(mean_gap_ns))
        if t >= horizon_ns:
            break
        agg = k % n_hosts
        k += 1
        responders = pick_responders(agg, spec.fanout, n_hosts, hosts_per_leaf, rng, spec.cross_leaf)
        out.append(IncastRequest(int(t), agg, responders, each))
    return out
