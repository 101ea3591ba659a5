import dataclasses
import json
import math
from importlib.resources import files

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import roofline_time

from sparsekit.errors import ConfigurationError, ParseError
from sparsekit.perf import (
    CONV,
    MATMUL,
    VECTOR,
    HardwareConfig,
    OpProfile,
    amdahl_limit,
    at_density,
    default_hw,
    graph_latency,
    load_hw,
    node_time,
    speedup_curve,
    throughput,
)

IDEAL = HardwareConfig(mem_bandwidth_bytes_per_s=math.inf, per_op_overhead_s=0.0)


def mm(macs, d=1.0, wbytes=0.0, abytes=0.0, name="mm"):
    return OpProfile(name, MATMUL, macs, 0, wbytes, abytes, d)


def vec(count, name="v"):
    return OpProfile(name, VECTOR, 0, count, 0, 0, None)


def test_default_hw():
    hw = default_hw()
    assert hw.max_sparsity_speedup == 32
    assert hw.dense_peak_int8_macs_per_s == 29.5e12 == 944e12 / 32
    assert hw.dense_peak_f16_macs_per_s == 472e12 / 32
    assert hw.mem_bandwidth_bytes_per_s == 72e9
    assert hw.num_subsystems == 4
    assert hw.dense_peak == hw.dense_peak_int8_macs_per_s
    assert dataclasses.replace(hw, precision="f16").dense_peak == 472e12 / 32


def test_bundled_hw_file_is_default():
    path = files("sparsekit.data").joinpath("default_hw.json")
    assert load_hw(path) == default_hw()
    assert "_comment" in json.loads(path.read_text())


def test_hw_file_errors(tmp_path):
    bad = tmp_path / "hw.json"
    bad.write_text('{"warp_speed": 9}')
    with pytest.raises(ConfigurationError):
        load_hw(bad)
    bad.write_text("{nope")
    with pytest.raises(ParseError):
        load_hw(bad)
    with pytest.raises(ConfigurationError):
        HardwareConfig(max_sparsity_speedup=0.5)
    with pytest.raises(ConfigurationError):
        HardwareConfig(mem_bandwidth_bytes_per_s=0)


# --- node_time -----------------------------------------------------------------------


def test_density_one_uses_all_macs():
    t, tag = node_time(mm(1e9), IDEAL)
    assert t == 1e9 / 29.5e12 and tag == "compute"


def test_cap_limits_effective_macs():
    assert node_time(mm(1e9, 1 / 64), IDEAL)[0] == node_time(mm(1e9, 1 / 32), IDEAL)[0] == (1e9 / 32) / 29.5e12


def test_eighth_density_example():
    assert node_time(mm(1e9, 1 / 8), IDEAL)[0] == pytest.approx(4.237e-6, rel=1e-4)


def test_memory_bound_and_overhead_tags():
    hw = default_hw()
    t, tag = node_time(mm(1e3, 1.0, wbytes=1e6), hw)
    assert tag == "memory"
    assert t == roofline_time(1e3, 1.0, 1e6, 0, hw.dense_peak, hw.mem_bandwidth_bytes_per_s, 32, 1.5, hw.per_op_overhead_s)
    assert node_time(mm(1.0), hw)[1] == "overhead"
    assert node_time(vec(1e9), hw) == (1e9 / 1e12 + hw.per_op_overhead_s, "vector")


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 1e12), st.floats(0, 1e9), st.floats(0, 1e9),
    st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(0, 1e-5),
)
def test_node_time_matches_roofline_and_is_monotone(macs, wb, ab, d1, d2, ov):
    hw = dataclasses.replace(default_hw(), per_op_overhead_s=ov)
    lo, hi = sorted((d1, d2))
    t_lo, t_hi = node_time(mm(macs, lo, wb, ab), hw)[0], node_time(mm(macs, hi, wb, ab), hw)[0]
    assert t_lo <= t_hi
    assert t_hi == pytest.approx(roofline_time(macs, hi, wb, ab, hw.dense_peak, 72e9, 32, 1.5, ov), rel=1e-12)
    assert node_time(mm(macs * 2, hi, wb, ab), hw)[0] >= t_hi
    assert node_time(mm(macs, hi, wb * 2, ab), hw)[0] >= t_hi
    assert node_time(mm(macs, hi, wb, ab * 2), hw)[0] >= t_hi


# --- latency, throughput -------------------------------------------------------------


def test_graph_latency_single_and_additive():
    hw = default_hw()
    p = mm(1e8, 0.5, 1e4, 1e3)
    assert graph_latency([p], hw).total_s == node_time(p, hw)[0]
    assert graph_latency([p, p], hw).total_s == 2 * node_time(p, hw)[0]
    rep = graph_latency([p, vec(1e6)], hw)
    assert rep.total_s == sum(rep.op_times)
    assert 0 <= rep.matmul_fraction <= 1


def test_throughput_examples():
    hw1 = dataclasses.replace(default_hw(), num_subsystems=1)
    p = [mm(1e8, 1.0, 1e5, 1e3), vec(1e5)]
    lat = lambda k: graph_latency([q.scaled(k) for q in p], hw1).total_s  # noqa: E731
    assert throughput(p, hw1, 3) == 3 / lat(3)
    hw4 = default_hw()
    L = graph_latency(p, hw4).total_s
    assert throughput(p, hw4, 4) == 4 / L
    assert throughput(p, hw4, 5) == 5 / graph_latency([q.scaled(2) for q in p], hw4).total_s
    with pytest.raises(ConfigurationError):
        throughput(p, hw4, 0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_throughput_scales_with_subsystems(k):
    p = [mm(1e8, 0.25, 1e5, 1e3), vec(1e5)]
    hw4, hw1 = default_hw(), dataclasses.replace(default_hw(), num_subsystems=1)
    assert throughput(p, hw4, 4 * k) == pytest.approx(4 * throughput(p, hw1, k), rel=1e-12)


# --- speedup and Amdahl --------------------------------------------------------------


def test_speedup_one_is_exact():
    p = [mm(1e9, 1.0, 1e6, 1e4), vec(1e7)]
    assert speedup_curve(p, default_hw(), [1])[0].speedup == 1.0


def test_pure_matmul_is_linear_up_to_cap():
    p = [mm(1e9), mm(3e9, name="b")]
    rows = speedup_curve(p, IDEAL, [1, 2, 8, 32, 64])
    assert [r.speedup for r in rows] == [1.0, 2.0, 8.0, 32.0, 32.0]
    assert amdahl_limit(p, IDEAL) == math.inf


def test_vector_fraction_bounds_speedup():
    hw = dataclasses.replace(IDEAL, vector_ops_per_s=1e12)
    t_mm = 4e9 / hw.dense_peak
    p = [mm(4e9), vec(t_mm / 4 * 1e12)]  # vector time is 20% of the total
    limit = amdahl_limit(p, hw)
    assert limit == pytest.approx(5.0, rel=1e-12)
    assert all(r.speedup < 5 for r in speedup_curve(p, hw, [2, 4, 8, 16, 32]))


def test_bert_like_quarter_vector():
    hw = dataclasses.replace(IDEAL, vector_ops_per_s=1e12)
    t_mm = 3e9 / hw.dense_peak
    p = [mm(3e9), vec(t_mm / 3 * 1e12)]
    assert amdahl_limit(p, hw) == pytest.approx(4.0, rel=1e-12)
    assert speedup_curve(p, hw, [16])[0].speedup < 4


def test_factor_below_one_rejected():
    with pytest.raises(ConfigurationError):
        speedup_curve([mm(1)], IDEAL, [0.5])


profiles = st.lists(
    st.one_of(
        st.builds(lambda m, w, a: mm(m, 1.0, w, a), st.floats(0, 1e11), st.floats(0, 1e7), st.floats(0, 1e7)),
        st.builds(vec, st.floats(1, 1e9)),
        st.builds(lambda m, a: OpProfile("aa", MATMUL, m, 0, 0, a, 1.0, prunable=False), st.floats(0, 1e9), st.floats(0, 1e5)),
        st.builds(lambda m: OpProfile("c", CONV, m, 0, m / 100, 0, 1.0), st.floats(1, 1e11)),
    ),
    min_size=1,
    max_size=8,
)


@settings(max_examples=300, deadline=None)
@given(profiles, st.floats(0, 1e-6))
def test_curve_invariants(ps, ov):
    hw = dataclasses.replace(default_hw(), per_op_overhead_s=ov)
    factors = [1, 1.5, 2, 4, 8, 16, 32, 64]
    rows = speedup_curve(ps, hw, factors)
    limit = amdahl_limit(ps, hw)
    assert rows[0].speedup == 1.0
    for prev, r in zip(rows, rows[1:]):
        assert r.speedup >= prev.speedup * (1 - 1e-12)
    for r in rows:
        assert r.speedup <= min(r.factor, 32) * (1 + 1e-12)
        assert r.speedup <= limit * (1 + 1e-12)
        if any(p.kind == VECTOR for p in ps) and r.factor > 1:
            assert r.speedup < r.factor


def test_at_density_skips_unprunable_and_vector():
    ps = [mm(10), vec(5), OpProfile("aa", MATMUL, 10, 0, 0, 0, 1.0, prunable=False)]
    out = at_density(ps, 0.25)
    assert [p.density for p in out] == [0.25, None, 1.0]


def test_profile_validation():
    with pytest.raises(ConfigurationError):
        OpProfile("x", MATMUL, 1, 0, 0, 0, 0.0)
    with pytest.raises(ConfigurationError):
        OpProfile("x", "pool", 1)
    with pytest.raises(ConfigurationError):
        mm(-1)
