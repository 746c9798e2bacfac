from fractions import Fraction
from typing import List

import pytest

from delaybm.policies import make_policy
from delaybm.sim import Simulator
from delaybm.switch import Packet, SharedBufferSwitch


class StubFlow:
    def __init__(self, fid: int = 0):
        self.id = fid
        self.klass = ""


class Sink:
    def __init__(self):
        self.got: List[Packet] = []

    def receive(self, pkt):
        self.got.append(pkt)


def make_switch(scheme="delay-bm", total_B=100_000, alphas=None, ports=1, bps=10_000_000_000,
                update_period_ns=80_000, params=None, **kw):
    sim = Simulator()
    drops = []
    sw = SharedBufferSwitch(sim, 0, total_B, make_policy(scheme, params or {}),
                            alphas or {0: Fraction(1, 2)}, update_period_ns=update_period_ns,
                            on_drop=lambda *r: drops.append(r), **kw)
    sinks = []
    for _ in range(ports):
        s = Sink()
        sw.add_port(bps, 0, s)
        sinks.append(s)
    return sim, sw, sinks, drops


def pkt(size=1500, prio=0, flow=None, seq=0, ecn=False):
    return Packet(flow or StubFlow(), seq, size - 60, prio, ecn_capable=ecn, size=size)


@pytest.fixture
def stub_flow():
    return StubFlow()


ACCEPTANCE_LINES: List[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
