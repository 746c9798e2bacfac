from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaybm.analytics import (SteadyStateInputs, SteadyTrace, Tolerances, cross_check, delta, delta_sum,
                               detect_steady_state, drain_time_bound, isolation_bounds, steady_state)

B = 983_040
C = 10**10 // 8


def test_single_queue_alpha_half_occupies_a_third():
    rep = steady_state(SteadyStateInputs(B, C, {0: F(1, 2)}, {0: [0]}))
    assert rep.occupied == F(B, 3)
    assert rep.remaining == F(2 * B, 3)
    assert rep.omega_bytes[(0, 0)] == F(B, 3)


def test_two_priorities_one_congested_queue_each():
    rep = steady_state(SteadyStateInputs(B, C, {0: 1, 1: F(1, 2)}, {0: [0], 1: [1]}))
    # (1 + 1/2) / (1 + 3/2) of the buffer is in use
    assert rep.occupied == B * F(3, 5)
    assert rep.omega_bytes[(0, 0)] == B * F(2, 5)
    assert rep.omega_bytes[(1, 1)] == B * F(1, 5)


def test_alpha_split_evenly_across_congested_queues():
    inp = SteadyStateInputs(B, C, {0: 1}, {0: [0, 1, 2, 3]})
    assert delta_sum(inp) == 1
    rep = steady_state(inp)
    assert rep.occupied == F(B, 2)
    assert all(w == F(B, 8) for w in rep.omega_bytes.values())


def test_isolation_bounds_two_equal_priorities():
    inp = SteadyStateInputs(B, C, {0: F(1, 2), 1: F(1, 2)}, {0: [0]})
    assert isolation_bounds(inp, 0) == (F(B, 4), F(B, 3))


def test_drain_time_bound_value_and_independence_from_c():
    one = SteadyStateInputs(B, C, {0: F(1, 2)}, {0: [0]})
    many = SteadyStateInputs(B, C, {0: F(1, 2)}, {0: list(range(16))})
    assert drain_time_bound(one, 0) == F(262_144, 10**9)
    assert drain_time_bound(one, 0) == drain_time_bound(many, 0)


def test_tiny_alpha_leaves_buffer_nearly_free():
    rep = steady_state(SteadyStateInputs(B, C, {0: F(1, 10**9)}, {0: [0]}))
    assert rep.occupied < 1
    assert B - rep.remaining < 1


def test_invalid_inputs():
    with pytest.raises(ValueError):
        SteadyStateInputs(B, C, {0: 0})
    with pytest.raises(ValueError):
        SteadyStateInputs(B, C, {0: 1}, {1: [0]})
    with pytest.raises(ValueError):
        delta(1, 0)


alpha_st = st.fractions(min_value=F(1, 64), max_value=8, max_denominator=64)


@st.composite
def scenarios(draw):
    n_prio = draw(st.integers(1, 4))
    alphas = {p: draw(alpha_st) for p in range(n_prio)}
    congested = {}
    for p in range(n_prio):
        ports = draw(st.lists(st.integers(0, 31), unique=True, max_size=8))
        if ports:
            congested[p] = ports
    total = draw(st.integers(10_000, 10**8))
    return SteadyStateInputs(total, C, alphas, congested)


@given(scenarios())
def test_identities(inp):
    rep = steady_state(inp)
    assert rep.occupied + rep.remaining == inp.total_B
    assert sum(rep.omega_bytes.values(), F(0)) == rep.occupied
    for p, ports in inp.congested.items():
        assert sum(rep.delta[(port, p)] for port in ports) == inp.alpha(p)
        lo, hi = isolation_bounds(inp, p)
        assert lo <= rep.priority_allocation(p) <= hi
        assert rep.omega_time[(ports[0], p)] * C == rep.omega_bytes[(ports[0], p)]


def test_steady_state_detection():
    flat = [(i * 10, 100) for i in range(100)]
    assert detect_steady_state(flat, 100, 0.02) == 0
    ramp = [(i * 10, min(i, 50) * 10) for i in range(100)]
    assert ramp[detect_steady_state(ramp, 100, 0.02)][0] >= 500
    saw = [(i * 10, 100 if i % 2 else 200) for i in range(100)]
    assert detect_steady_state(saw, 100, 0.02) is None
    assert detect_steady_state([], 100, 0.02) is None


def _trace(scheme, occupancy_values, qlen=None):
    tr = SteadyTrace(scheme, B, 1500, 10**10, 10_000)
    for i, q in enumerate(occupancy_values):
        tr.samples.append((i * 2_500, q, {(0, 0): qlen if qlen is not None else q}))
        tr.max_sojourn.append((i * 2_500, 0))
    return tr


def test_cross_check_not_applicable_for_other_schemes():
    inp = SteadyStateInputs(B, C, {0: F(1, 2)}, {0: [0]})
    assert cross_check(_trace("cs", [B // 3] * 200), inp).outcome == "not applicable"


def test_cross_check_without_convergence():
    inp = SteadyStateInputs(B, C, {0: F(1, 2)}, {0: [0]})
    rep = cross_check(_trace("delay-bm", [1000 * (i % 7 + 1) for i in range(400)]), inp)
    assert rep.outcome == "no steady state detected"
    assert not rep.passed


def test_cross_check_on_ideal_trace_passes_and_detects_error():
    inp = SteadyStateInputs(B, C, {0: F(1, 2)}, {0: [0]})
    good = cross_check(_trace("delay-bm", [B // 3] * 200), inp)
    assert good.outcome == "checked" and good.passed
    bad = cross_check(_trace("delay-bm", [B // 2] * 200), inp, Tolerances(relative=0.05))
    assert not bad.passed
    assert "occupancy: FAIL" in bad.to_text()
