from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaybm.policies import (ADMISSION_THRESHOLD, FAIR_DROP, FULL_BUFFER, ConfigError, PolicyContext,
                              abm_admission_threshold, abm_drain_rate, as_fraction, cs_admit, delay_threshold,
                              delay_threshold_ns, dt_admission_threshold, fab_admission_threshold, ib_admission,
                              make_policy)

HALF = Fraction(1, 2)
C_10G = 1_250_000_000  # bytes per second


def ctx(free=500_000, total=1_000_000, alpha=HALF, c=1, qlen=0, C=C_10G):
    return PolicyContext(total, total - free, C, 0, alpha, c, qlen)


# ---------------------------------------------------------------- delay threshold

def test_delay_threshold_hand_example():
    # 0.5 * 500,000 B / 1.25e9 B/s = 200 us
    assert delay_threshold(ctx()) == 200_000


def test_delay_threshold_zero_when_buffer_full():
    assert delay_threshold(ctx(free=0)) == 0


def test_delay_threshold_halves_with_two_congested_queues():
    assert delay_threshold(ctx(c=2)) == 100_000


def test_delay_threshold_floors_c_at_one():
    assert delay_threshold_ns(HALF, 500_000, 0, C_10G) == delay_threshold_ns(HALF, 500_000, 1, C_10G)


@given(free=st.integers(0, 10**8), c=st.integers(1, 64),
       num=st.integers(1, 1000), den=st.integers(1, 1000))
def test_delay_threshold_matches_exact_rational(free, c, num, den):
    alpha = Fraction(num, den)
    exact = alpha * free * 10**9 / (c * C_10G)
    assert delay_threshold_ns(alpha, free, c, C_10G) == exact.numerator // exact.denominator


@given(free=st.integers(0, 10**7), extra=st.integers(0, 10**6), c=st.integers(1, 16))
def test_delay_threshold_monotone_in_free_buffer(free, extra, c):
    assert delay_threshold_ns(HALF, free, c, C_10G) <= delay_threshold_ns(HALF, free + extra, c, C_10G)


# ---------------------------------------------------------------- DT / CS

def test_dt_hand_example():
    assert dt_admission_threshold(ctx()) == 250_000


def test_dt_full_buffer_gives_zero():
    assert dt_admission_threshold(ctx(free=0)) == 0


def test_dt_alpha_one_empty_buffer():
    assert dt_admission_threshold(ctx(free=1_000_000, alpha=Fraction(1))) == 1_000_000


def test_cs_boundaries():
    assert not cs_admit(ctx(free=0), 1)
    assert cs_admit(ctx(free=1500), 1500)
    assert not cs_admit(ctx(free=1499), 1500)
    assert cs_admit(ctx(free=500_000, qlen=400_000), 1500)


# ---------------------------------------------------------------- FAB

def test_fab_boost_for_new_flow():
    c = ctx()
    assert fab_admission_threshold(c, 0) == 4 * dt_admission_threshold(c)


def test_fab_past_cutoff_equals_dt():
    c = ctx()
    assert fab_admission_threshold(c, 100_000) == dt_admission_threshold(c)


@given(age=st.integers(0, 10**7), free=st.integers(0, 10**6))
def test_fab_zero_cutoff_is_dt(age, free):
    c = ctx(free=free)
    assert fab_admission_threshold(c, age, cutoff=0) == dt_admission_threshold(c)


# ---------------------------------------------------------------- IB

def test_ib_single_flow_behaves_as_dt():
    c = ctx(qlen=100_000)
    assert ib_admission(c, 1500, flow_bytes=100_000, active_flows=1) is None
    assert ib_admission(ctx(qlen=249_000), 1500, 249_000, 1) == ADMISSION_THRESHOLD


def test_ib_unfair_flow_dropped():
    # 80% of a 4-flow queue against a 2x fair share of 25%
    assert ib_admission(ctx(qlen=100_000), 1500, flow_bytes=80_000, active_flows=4) == FAIR_DROP


def test_ib_dt_rejection_wins():
    assert ib_admission(ctx(qlen=260_000), 1500, flow_bytes=1, active_flows=4) == ADMISSION_THRESHOLD
    assert ib_admission(ctx(free=1000), 1500, flow_bytes=1, active_flows=4) == FULL_BUFFER


# ---------------------------------------------------------------- ABM

def test_abm_reduces_to_dt():
    c = ctx()
    assert abm_admission_threshold(c, Fraction(1), n_p=1) == dt_admission_threshold(c)


def test_abm_hand_example():
    assert abm_admission_threshold(ctx(), HALF, n_p=1) == 125_000


def test_abm_idle_queue_floor():
    mu = abm_drain_rate(0, 80_000, C_10G)
    assert mu == Fraction(1, 100)
    assert abm_admission_threshold(ctx(), mu, n_p=1) > 0


def test_abm_drain_rate_clamped_to_one():
    assert abm_drain_rate(10**9, 1000, C_10G) == 1
    assert abm_drain_rate(50_000, 80_000, C_10G) == Fraction(50_000 * 10**9, 80_000 * C_10G)


# ---------------------------------------------------------------- plumbing

def test_context_validation():
    with pytest.raises(ValueError):
        PolicyContext(100, 101, C_10G, 0, HALF)
    with pytest.raises(ValueError):
        PolicyContext(100, 0, C_10G, 0, Fraction(0))
    with pytest.raises(ValueError):
        PolicyContext(100, 0, C_10G, 0, HALF, c_p=0)


def test_as_fraction_is_exact_for_decimal_floats():
    assert as_fraction(0.5) == HALF
    assert as_fraction(0.1) == Fraction(1, 10)
    assert as_fraction(10**6) == 10**6
    with pytest.raises(ConfigError):
        as_fraction(float("inf"))


@pytest.mark.parametrize("name", ["delay-bm", "dt", "cs", "fab", "ib", "abm"])
def test_make_policy_known(name):
    assert make_policy(name).name == name


def test_make_policy_unknown():
    with pytest.raises(ConfigError, match="abm2"):
        make_policy("abm2")
