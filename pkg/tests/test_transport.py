from fractions import Fraction

import pytest

from delaybm.net import Host, TopologySpec
from delaybm.policies import make_policy
from delaybm.scenario import CellSpec, idle_network, run_cell
from delaybm.sim import Simulator
from delaybm.switch import HEADER, MSS, SharedBufferSwitch
from delaybm.transport import (Flow, TransportError, TransportParams, base_rtt, ideal_fct,
                               segment_sizes)

G10 = 10_000_000_000
G1 = 1_000_000_000


class RecordingHost:
    def __init__(self):
        self.sent = []

    def send(self, pkt):
        self.sent.append(pkt)


def bare_flow(size=10**7, kind="dctcp", links=((G10, 10_000),), first_rtt_class=None, **params):
    sim = Simulator()
    src = RecordingHost()
    f = Flow(sim, 1, src, None, size, [], list(links), TransportParams(kind, **params),
             first_rtt_class=first_rtt_class)
    return sim, src, f


# ---------------------------------------------------------------- DCTCP estimator

def test_dctcp_alpha_one_step():
    sim, src, f = bare_flow()
    f.start()
    f.win_acked, f.win_marked = 10 * MSS, 5 * MSS
    f._dctcp_window_end()
    assert f.dctcp_alpha == 0.03125


def test_dctcp_alpha_decays_geometrically():
    sim, src, f = bare_flow()
    f.start()
    f.dctcp_alpha = 0.8
    for _ in range(20):
        f.win_acked, f.win_marked = 10 * MSS, 0
        f._dctcp_window_end()
    assert f.dctcp_alpha == pytest.approx(0.8 * (15 / 16) ** 20)


def test_dctcp_full_marking_halves_window():
    sim, src, f = bare_flow()
    f.start()
    for _ in range(200):
        f.win_acked, f.win_marked = 10 * MSS, 10 * MSS
        f._dctcp_window_end()
    assert f.dctcp_alpha == pytest.approx(1.0, abs=1e-5)
    f.cwnd = 64 * MSS
    f.win_acked, f.win_marked = 10 * MSS, 10 * MSS
    f._dctcp_window_end()
    assert f.cwnd == pytest.approx(32 * MSS, rel=1e-4)


def test_dctcp_ack_path_reacts_to_marks():
    sim, src, f = bare_flow()
    f.start()
    cwnd0 = f.cwnd
    f.on_ack(f.snd_nxt, True, 0)  # the whole first window acked and marked
    assert f.dctcp_alpha == pytest.approx(1 / 16)
    assert f.cwnd < cwnd0 + f.snd_una


# ---------------------------------------------------------------- loss handling

def test_triple_dupack_halves_and_retransmits():
    sim, src, f = bare_flow(kind="aimd")
    f.start()
    f.on_ack(MSS, False, 0)
    cwnd = f.cwnd
    flight = f.snd_nxt - f.snd_una
    n_sent = len(src.sent)
    for _ in range(3):
        f.on_ack(MSS, False, 0)
    assert f.in_recovery
    assert f.cwnd == max(2 * MSS, min(cwnd, flight) // 2)
    assert src.sent[n_sent].seq == MSS


def test_rto_resets_window_to_one_segment():
    sim, src, f = bare_flow(kind="aimd")
    f.start()
    sim.run_until(f.rto_deadline)
    assert f.timeouts == 1
    assert f.cwnd == MSS
    assert src.sent[-1].seq == 0


def test_ack_beyond_size_is_error():
    sim, src, f = bare_flow(size=1000)
    f.start()
    with pytest.raises(TransportError):
        f.on_ack(5000, False, 0)


def test_unknown_transport():
    with pytest.raises(TransportError):
        TransportParams("cubic")


def test_receiver_counts_retransmissions_once():
    sim, src, f = bare_flow(size=3 * MSS)
    f.start()
    first = list(src.sent)
    for p in [first[1], first[0], first[1], first[2], first[0]]:
        f.on_data(p)
    assert f.delivered == 3 * MSS and f.rcv_nxt == 3 * MSS


# ---------------------------------------------------------------- first RTT tagging

def test_first_packet_flagged():
    sim, src, f = bare_flow(first_rtt_class=1)
    f.start()
    assert src.sent[0].first_rtt and src.sent[0].priority == 1


def test_late_packet_unflagged():
    sim, src, f = bare_flow(first_rtt_class=1)
    f.start()
    sim.run_until(2 * f.base_rtt)
    p = f.tag_first_rtt(src.sent[0])
    assert not p.first_rtt


def test_zero_base_rtt_flags_nothing():
    sim, src, f = bare_flow(first_rtt_class=1, links=((G10, 0),))
    f.base_rtt = 0
    f.start()
    assert not any(p.first_rtt for p in src.sent)
    assert all(p.priority == 0 for p in src.sent)


# ---------------------------------------------------------------- ideal FCT

def test_ideal_fct_two_hop_closed_form():
    links = [(G10, 10_000), (G10, 10_000)]
    ser_data = 1500 * 8 * 10**9 // G10  # 1200 ns
    ser_ack = 64 * 8 * 10**9 // G10  # 51 ns
    assert ideal_fct(MSS, links) == 2 * ser_data + 2 * 10_000 + 2 * (ser_ack + 10_000)


def test_ideal_fct_zero_size_is_one_empty_round_trip():
    links = [(G10, 10_000), (G10, 10_000)]
    assert ideal_fct(0, links) == base_rtt(links, pkt_size=HEADER)
    assert ideal_fct(0, links) <= ideal_fct(1, links) < ideal_fct(MSS + 1, links)


def test_ideal_fct_linear_for_large_flows():
    links = [(G1, 10_000), (2 * G1, 10_000)]
    a, b = ideal_fct(10**8, links), ideal_fct(2 * 10**8, links)
    assert b / a == pytest.approx(2, rel=0.01)


def test_segment_sizes():
    assert segment_sizes(0) == []
    assert segment_sizes(MSS) == [MSS]
    assert segment_sizes(2 * MSS + 5) == [MSS, MSS, 5]


@pytest.mark.parametrize("size,dst", [(MSS, 5), (100_000, 5), (100_000, 40), (2_000_000, 40), (7, 63)])
def test_single_flow_matches_ideal(size, dst):
    spec = CellSpec(scheme="dt", topology=TopologySpec())
    sim, net = idle_network(spec)
    route = net.route((0, dst, 1, 80, 6))
    done = []
    f = Flow(sim, 1, net.hosts[0], net.hosts[dst], size, route, net.path_links(route), TransportParams("dctcp"),
             on_finish=done.append)
    sim.schedule(1000, f.start)
    sim.run_until(10**9)
    rec = f.record()
    assert done and f.delivered == size
    assert 1.0 <= rec.slowdown <= 1.05
    if size <= 10 * MSS:  # fits in the initial window: no slow-start stalls
        assert rec.fct == f.ideal


def test_completed_flows_deliver_every_byte():
    spec = CellSpec(scheme="dt", load=0.5, burst=0.5, duration_ns=20_000_000, drain_ns=100_000_000,
                    incast_requests_per_second=30, transports=((0, "aimd"),))
    r = run_cell(spec)
    assert r.flows.records
    assert all(rec.finish >= rec.start for rec in r.flows.records)
    assert min(rec.slowdown for rec in r.flows.records) >= 0.99


# ---------------------------------------------------------------- DCTCP queue sanity

def test_dctcp_long_flow_holds_queue_near_k():
    sim = Simulator()
    sw = SharedBufferSwitch(sim, 0, 10**6, make_policy("dt"), {0: Fraction(1, 2)})
    src, dst = Host(sim, 0, 0), Host(sim, 1, 0)
    src.connect(G10, 5_000, sw)
    port = sw.add_port(G1, 5_000, dst)
    route = [(src, 0), (sw, 0)]
    links = [(G10, 5_000), (G1, 5_000)]
    f = Flow(sim, 1, src, dst, 10**9, route, links, TransportParams("dctcp"))
    sim.schedule(0, f.start)
    samples = []

    def sample():
        samples.append(sw.queue(0, 0).byte_len)
        sim.schedule_in(10_000, sample)

    sim.schedule(20_000_000, sample)
    sim.run_until(60_000_000)
    k = port.ecn_k
    mean = sum(samples) / len(samples)
    assert 0.5 * k <= mean <= 1.5 * k
    assert f.timeouts == 0
