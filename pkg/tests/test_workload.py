import numpy as np
import pytest

from delaybm.sim import STREAM_INCAST, STREAM_WEBSEARCH, rng_stream
from delaybm.workload import (FlowSizeCdf, IncastSpec, LoadSpec, WorkloadError, generate_incast, pick_responders,
                              sample_flow_size, schedule_poisson_arrivals, size_at, websearch_cdf)

B = 983_040


def test_below_first_point_gives_first_size():
    cdf = FlowSizeCdf(((100, 0.2), (200, 1.0)))
    assert size_at(cdf, 0.1) == 100
    assert size_at(cdf, 0.6) == 150
    assert size_at(cdf, 1.0) == 200


def test_degenerate_cdf():
    cdf = FlowSizeCdf.degenerate(4242)
    rng = np.random.default_rng(0)
    assert {sample_flow_size(cdf, rng) for _ in range(100)} == {4242}


def test_sample_mean_matches_analytic_mean():
    cdf = websearch_cdf()
    rng = rng_stream(11, STREAM_WEBSEARCH)
    samples = [sample_flow_size(cdf, rng) for _ in range(100_000)]
    assert np.mean(samples) == pytest.approx(cdf.mean(), rel=0.03)


def test_bundled_cdf_is_heavy_tailed():
    cdf = websearch_cdf()
    # share of bytes carried by flows above 1 MB, from the piecewise-linear density
    pts = cdf.points
    big = sum((s0 + s1) / 2 * (p1 - p0) for (s0, p0), (s1, p1) in zip(pts, pts[1:]) if s0 >= 1_000_000)
    assert big / cdf.mean() > 0.5


@pytest.mark.parametrize("points", [(), ((10, 0.5), (5, 1.0)), ((10, 0.5), (20, 0.4), (30, 1.0)),
                                    ((10, 0.5), (20, 0.9))])
def test_invalid_cdf(points):
    with pytest.raises(WorkloadError):
        FlowSizeCdf(tuple(points))


def test_cdf_text_format(tmp_path):
    p = tmp_path / "x.cdf"
    p.write_text("# size prob\n100 0.5\n\n200 1.0  # tail\n")
    assert FlowSizeCdf.from_file(p).points == ((100, 0.5), (200, 1.0))
    with pytest.raises(WorkloadError):
        FlowSizeCdf.from_text("100 0.5 7\n")


def test_arrival_rate_example():
    assert LoadSpec(0.4, 16_000_000_000).arrival_rate(1_600_000) == pytest.approx(500)


@pytest.mark.parametrize("load", [0, 1, 1.5, -0.1])
def test_load_bounds(load):
    with pytest.raises(WorkloadError):
        LoadSpec(load, 10**9)


def test_tiny_load_produces_nothing():
    arr = schedule_poisson_arrivals(LoadSpec(1e-9, 16 * 10**9), websearch_cdf(), 64,
                                    rng_stream(1, STREAM_WEBSEARCH), 10**9)
    assert arr == []


def test_offered_load_close_to_target():
    cap = 16 * 10**9
    horizon = 100 * 10**9
    arr = schedule_poisson_arrivals(LoadSpec(0.4, cap), websearch_cdf(), 64, rng_stream(3, STREAM_WEBSEARCH),
                                    horizon)
    offered = sum(a.size for a in arr) * 8 / (horizon / 1e9)
    assert offered / cap == pytest.approx(0.4, rel=0.05)


def test_arrivals_are_well_formed_and_deterministic():
    def gen():
        return schedule_poisson_arrivals(LoadSpec(0.5, 16 * 10**9), websearch_cdf(), 64,
                                         rng_stream(9, STREAM_WEBSEARCH), 10**8)

    a = gen()
    assert a == gen()
    assert all(x.src != x.dst and 0 <= x.src < 64 and 0 <= x.dst < 64 and x.size >= 1 for x in a)
    assert [x.time for x in a] == sorted(x.time for x in a)


def test_incast_response_size_example():
    assert IncastSpec(8, 0.3).response_bytes(B) == 36_864


def test_incast_full_buffer_burst():
    spec = IncastSpec(8, 1.0)
    assert spec.response_bytes(B) * spec.fanout == B


@pytest.mark.parametrize("kwargs", [dict(fanout=1), dict(request_fraction=0), dict(request_fraction=1.5),
                                    dict(requests_per_second=-1)])
def test_incast_spec_validation(kwargs):
    with pytest.raises(WorkloadError):
        IncastSpec(**kwargs)


def test_incast_requests():
    spec = IncastSpec(8, 0.3, 20.0)
    reqs = generate_incast(spec, B, rng_stream(4, STREAM_INCAST), 64, 16, 10**9)
    # Poisson at 64 * 20 requests per second over one second
    assert 1100 < len(reqs) < 1460
    assert [r.aggregator for r in reqs[:70]] == [i % 64 for i in range(70)]
    for r in reqs:
        assert len(set(r.responders)) == 8
        assert r.aggregator not in r.responders
        assert all(h // 16 != r.aggregator // 16 for h in r.responders)
        assert r.response_bytes == 36_864
    assert reqs == generate_incast(spec, B, rng_stream(4, STREAM_INCAST), 64, 16, 10**9)


def test_same_leaf_fallback_and_overflow():
    rng = np.random.default_rng(1)
    r = pick_responders(0, 3, 4, 4, rng)  # one leaf: no cross-leaf candidates
    assert len(set(r)) == 3 and 0 not in r
    with pytest.raises(WorkloadError):
        pick_responders(0, 4, 4, 4, rng)
