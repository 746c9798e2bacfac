"""FCT slowdown statistics, occupancy series, throughput and drop records."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .sim import NS_PER_S
from .transport import FlowRecord

INCAST = "incast"
WEB_SHORT = "websearch-short"
WEB_LONG = "websearch-long"
CLASSES = (INCAST, WEB_SHORT, WEB_LONG)

FLOWS_HEADER = ["flow_id", "class", "priority", "size_bytes", "start_ns", "finish_ns", "ideal_fct_ns", "slowdown"]
OCCUPANCY_HEADER = ["time_ns", "occupied_bytes"]
DROPS_HEADER = ["time_ns", "switch_id", "port", "priority", "reason"]


class NoData(LookupError):
    """Raised when a statistic is requested over an empty selection."""


def short_flow_classifier(size: int, cutoff: int = 100_000) -> str:
    return WEB_SHORT if size <= cutoff else WEB_LONG


def nearest_rank(values: Sequence[float], q: float) -> float:
    if not values:
        raise NoData("no data")
    if not 0 < q <= 1:
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    s = sorted(values)
    rank = max(1, math.ceil(q * len(s) - 1e-12))
    return s[rank - 1]


@dataclass
class FctDataset:
    records: List[FlowRecord] = field(default_factory=list)
    incomplete: List[Tuple[int, str, int, int]] = field(default_factory=list)  # (id, class, size, start)

    def select(self, klass: Optional[str] = None, priority: Optional[int] = None) -> List[FlowRecord]:
        return [r for r in self.records
                if (klass is None or r.klass == klass) and (priority is None or r.priority == priority)]

    def percentile(self, klass: Optional[str], q: float, priority: Optional[int] = None) -> float:
        return percentile(self, klass, q, priority)


def percentile(dataset: FctDataset, klass: Optional[str], q: float, priority: Optional[int] = None) -> float:
    """Nearest-rank percentile of slowdown over the selected records."""
    sel = dataset.select(klass, priority)
    if not sel:
        raise NoData(f"no completed flows for class={klass!r} priority={priority!r}")
    return nearest_rank([r.slowdown for r in sel], q)


def throughput(tx_log: Iterable[Tuple[int, int, int]], start_ns: int, end_ns: int) -> float:
    """Bits per second serialized within [start, end).

    Each packet contributes the fraction of its serialization interval that
    overlaps the window, so the result never exceeds line rate.
    """
    if end_ns <= start_ns:
        raise ValueError("empty window")
    bits = 0.0
    for a, b, size in tx_log:
        if b <= start_ns or a >= end_ns:
            continue
        if b == a:
            continue
        overlap = min(b, end_ns) - max(a, start_ns)
        bits += size * 8 * overlap / (b - a)
    return bits * NS_PER_S / (end_ns - start_ns)


@dataclass
class OccupancySeries:
    samples: List[Tuple[int, int]] = field(default_factory=list)

    def add(self, t: int, occupied: int) -> None:
        if self.samples and t <= self.samples[-1][0]:
            raise ValueError("occupancy timestamps must be strictly increasing")
        self.samples.append((t, occupied))

    def mean(self, start: int = 0, end: Optional[int] = None) -> float:
        vals = [v for t, v in self.samples if t >= start and (end is None or t < end)]
        if not vals:
            raise NoData("no occupancy samples in window")
        return sum(vals) / len(vals)


# ---------------------------------------------------------------- CSV I/O

def _fmt_slowdown(x: float) -> str:
    return f"{x:.6f}"


def write_flows(path: Path, data: FctDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOWS_HEADER)
        for r in sorted(data.records, key=lambda r: r.flow_id):
            w.writerow([r.flow_id, r.klass, r.priority, r.size, r.start, r.finish, r.ideal_fct,
                        _fmt_slowdown(r.slowdown)])


def write_incomplete(path: Path, data: FctDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flow_id", "class", "size_bytes", "start_ns"])
        for row in sorted(data.incomplete):
            w.writerow(row)


def write_occupancy(path: Path, series: OccupancySeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OCCUPANCY_HEADER)
        w.writerows(series.samples)


def write_drops(path: Path, drops: Sequence[Tuple[int, int, int, int, str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DROPS_HEADER)
        w.writerows(drops)


def read_flows(path: Path) -> FctDataset:
    data = FctDataset()
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != FLOWS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in r:
            fid, klass, prio, size, start, finish, ideal, _ = row
            data.records.append(FlowRecord(int(fid), int(size), int(start), int(finish), int(ideal),
                                           klass, int(prio)))
    return data


def read_occupancy(path: Path) -> OccupancySeries:
    s = OccupancySeries()
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for t, v in r:
            s.samples.append((int(t), int(v)))
    return s


SUMMARY_STATS = ("p50", "p95", "p99")


def summary_header(extra: Sequence[str] = ()) -> List[str]:
    cols = ["scheme", "scenario", "seed", *extra]
    for klass in CLASSES:
        for stat in SUMMARY_STATS:
            cols.append(f"{klass}_{stat}")
    cols += ["completed_flows", "incomplete_flows", "mean_occupancy_bytes", "mean_throughput_bps"]
    return cols


def slowdown_stats(data: FctDataset) -> Dict[str, str]:
    out = {}
    for klass in CLASSES:
        for stat, q in zip(SUMMARY_STATS, (0.5, 0.95, 0.99)):
            try:
                out[f"{klass}_{stat}"] = _fmt_slowdown(percentile(data, klass, q))
            except NoData:
                out[f"{klass}_{stat}"] = ""
    return out


def check_drop_accounting(queues) -> None:
    for q in queues:
        assert q.arrived == q.enqueued + q.admission_dropped
        assert q.enqueued == q.transmitted + q.dequeue_dropped + len(q.fifo)
