"""Deterministic discrete-event kernel.

Time is an integer count of nanoseconds. Events with the same firing time run
in the order they were scheduled, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple

import numpy as np

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class Event:
    __slots__ = ("fire_at", "sequence", "action", "args", "cancelled")

    def __init__(self, fire_at: int, sequence: int, action: Callable[..., Any], args: Tuple = ()):
        self.fire_at = fire_at
        self.sequence = sequence
        self.action = action
        self.args = args
        self.cancelled = False

    def __repr__(self) -> str:
        name = getattr(self.action, "__qualname__", repr(self.action))
        return f"Event({self.fire_at}, #{self.sequence}, {name})"


@dataclass
class RunStats:
    clock: int
    events_fired: int


class Simulator:
    def __init__(self, trace: bool = False):
        self.now = 0
        self._heap: List[Tuple[int, int, Event]] = []
        self._seq = 0
        self.events_fired = 0
        self.trace: Optional[List[str]] = [] if trace else None

    def schedule(self, fire_at: int, action: Callable[..., Any], *args: Any) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"event at t={fire_at}ns scheduled from t={self.now}ns")
        self._seq += 1
        ev = Event(fire_at, self._seq, action, args)
        heapq.heappush(self._heap, (fire_at, self._seq, ev))
        return ev

    def schedule_in(self, delay: int, action: Callable[..., Any], *args: Any) -> Event:
        return self.schedule(self.now + delay, action, *args)

    def push(self, event: Event) -> Event:
        """Insert a pre-built event; its sequence number fixes the tie order."""
        if event.fire_at < self.now:
            raise SchedulingError(f"event at t={event.fire_at}ns scheduled from t={self.now}ns")
        self._seq = max(self._seq, event.sequence)
        heapq.heappush(self._heap, (event.fire_at, event.sequence, event))
        return event

    @staticmethod
    def cancel(event: Event) -> None:
        event.cancelled = True

    @property
    def pending(self) -> int:
        return sum(1 for _, _, ev in self._heap if not ev.cancelled)

    def run_until(self, t: int) -> RunStats:
        if t < self.now:
            raise SchedulingError(f"run_until({t}) with clock at {self.now}")
        heap = self._heap
        pop = heapq.heappop
        trace = self.trace
        fired = 0
        while heap and heap[0][0] <= t:
            fire_at, seq, ev = pop(heap)
            if ev.cancelled:
                continue
            self.now = fire_at
            if trace is not None:
                trace.append(f"{fire_at} {seq} {getattr(ev.action, '__qualname__', '?')}")
            ev.action(*ev.args)
            fired += 1
        self.now = t
        self.events_fired += fired
        return RunStats(clock=t, events_fired=fired)


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent counter-based generator for one (seed, stream) pair."""
    ss = np.random.SeedSequence(entropy=seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


# stream ids, one per simulation component
STREAM_WEBSEARCH = 1
STREAM_INCAST = 2
STREAM_ECMP = 3
STREAM_TRANSPORT = 4
