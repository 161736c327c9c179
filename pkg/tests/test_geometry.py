import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqpv.errors import EmptyRegionError
from diqpv.geometry import (
    SPEED_OF_LIGHT_M_PER_NS,
    RegionSpec,
    TimingGeometry,
    axis_interval,
    classical_lengths_ok,
    point_in_classical_region,
    point_in_quantum_region,
    quantum_advantage,
    quantum_lengths_ok,
    region_size,
    region_spec,
)
from diqpv.reference import timing_geometry

from golden import REFERENCE_ADVANTAGE, REFERENCE_LENGTHS, REFERENCE_TIMING
from oracles import (
    direct_3d_volume,
    lens_a_interval_oracle,
    lens_b_interval_oracle,
    quantum_interval_oracle,
    sphere_volume,
)


@pytest.fixture(scope="module")
def tg():
    return TimingGeometry(**REFERENCE_TIMING)


@pytest.fixture(scope="module")
def spec(tg):
    return region_spec(tg)


def test_derived_lengths(tg, spec):
    assert spec.radius_a == pytest.approx(157.28611309, abs=1e-5)
    assert spec.radius_b == pytest.approx(116.70920391, abs=1e-5)
    assert spec.ellipse_ab == pytest.approx(274.81974625, abs=1e-5)
    assert spec.ellipse_ba == pytest.approx(273.17088773, abs=1e-5)
    assert spec.d_sep == 195.1
    for name, published in REFERENCE_LENGTHS.items():
        assert abs(getattr(spec, name) - published) <= 0.3
    # The bundled survey is the same geometry.
    assert region_spec(timing_geometry()) == spec


def test_timing_validation():
    with pytest.raises(ValueError):
        TimingGeometry(s_vap_ns=10.0, s_vb_ns=0.0, r_vap_ns=5.0, r_vb_ns=1.0, d_sep_m=10.0)
    with pytest.raises(ValueError):
        TimingGeometry(s_vap_ns=0.0, s_vb_ns=0.0, r_vap_ns=5.0, r_vb_ns=5.0, d_sep_m=0.0)
    with pytest.raises(ValueError):
        TimingGeometry(
            s_vap_ns=0.0, s_vb_ns=0.0, r_vap_ns=5.0, r_vb_ns=5.0, d_sep_m=10.0,
            d_sep_sigma_m=-0.1,
        )


def test_zero_round_trip_collapses_region():
    tg0 = TimingGeometry(
        s_vap_ns=1000.0, s_vb_ns=1000.0, r_vap_ns=1000.0, r_vb_ns=2000.0, d_sep_m=50.0
    )
    spec0 = region_spec(tg0)
    assert spec0.radius_a == 0.0
    lo, hi = axis_interval("quantum", spec0)
    assert hi - lo <= 0.0
    assert region_size("quantum", spec0, 1, mc_samples=10_000) == (0.0, 0.0)


def test_point_examples(spec):
    d = spec.d_sep
    assert point_in_quantum_region((d / 2.0,), spec)
    assert point_in_quantum_region((d - 92.8,), spec)
    assert not point_in_quantum_region((0.0,), spec)
    assert point_in_classical_region((0.0,), spec)
    assert not point_in_quantum_region((500.0,), spec)
    assert not point_in_classical_region((500.0,), spec)
    assert point_in_quantum_region((d / 2.0, 50.0), spec)
    assert point_in_quantum_region((d / 2.0, 30.0, 40.0), spec)
    with pytest.raises(ValueError):
        point_in_quantum_region((1.0, 2.0, 3.0, 4.0), spec)


@given(
    st.floats(-400.0, 600.0),
    st.floats(-300.0, 300.0),
    st.floats(-300.0, 300.0),
)
@settings(max_examples=300, deadline=None)
def test_quantum_region_inside_classical(x, y, z):
    spec = region_spec(TimingGeometry(**REFERENCE_TIMING))
    if point_in_quantum_region((x, y, z), spec):
        assert point_in_classical_region((x, y, z), spec)


def test_rotational_symmetry(spec):
    rng = np.random.Generator(np.random.Philox(key=17))
    for _ in range(100):
        x = rng.uniform(-100, 300)
        rho = rng.uniform(0, 200)
        theta = rng.uniform(0, 2 * math.pi)
        variants = [
            (x, rho),
            (x, -rho),
            (x, rho, 0.0),
            (x, 0.0, rho),
            (x, rho * math.cos(theta), rho * math.sin(theta)),
        ]
        results = {point_in_quantum_region(p, spec) for p in variants}
        assert len(results) == 1
        results = {point_in_classical_region(p, spec) for p in variants}
        assert len(results) == 1


def test_regions_grow_with_timing_slack(tg, spec):
    later = TimingGeometry(**{**REFERENCE_TIMING, "r_vap_ns": tg.r_vap_ns + 100.0})
    bigger = region_spec(later)
    assert bigger.radius_a > spec.radius_a
    assert bigger.ellipse_ba > spec.ellipse_ba
    for region in ("quantum", "lens_a", "lens_b"):
        lo0, hi0 = axis_interval(region, spec)
        lo1, hi1 = axis_interval(region, bigger)
        assert hi1 - lo1 >= hi0 - lo0 - 1e-12


def test_axis_intervals_match_oracles(spec):
    ra, rb = spec.radius_a, spec.radius_b
    m_ab, m_ba, d = spec.ellipse_ab, spec.ellipse_ba, spec.d_sep
    assert axis_interval("quantum", spec) == quantum_interval_oracle(ra, rb, m_ab, m_ba, d)
    assert axis_interval("lens_a", spec) == lens_a_interval_oracle(ra, m_ba, d)
    assert axis_interval("lens_b", spec) == lens_b_interval_oracle(rb, m_ab, d)
    lo, hi = axis_interval("quantum", spec)
    assert lo == pytest.approx(78.391, abs=1e-3)
    assert hi == pytest.approx(157.286, abs=1e-3)
    with pytest.raises(ValueError):
        axis_interval("nowhere", spec)

    rng = np.random.Generator(np.random.Philox(key=19))
    for _ in range(50):
        r = RegionSpec(
            radius_a=float(rng.uniform(1, 200)),
            radius_b=float(rng.uniform(1, 200)),
            ellipse_ab=float(rng.uniform(1, 400)),
            ellipse_ba=float(rng.uniform(1, 400)),
            d_sep=float(rng.uniform(1, 300)),
        )
        lo, hi = axis_interval("quantum", r)
        olo, ohi = quantum_interval_oracle(
            r.radius_a, r.radius_b, r.ellipse_ab, r.ellipse_ba, r.d_sep
        )
        assert max(hi - lo, 0.0) == pytest.approx(ohi - olo, abs=1e-12)


def test_region_size_1d_matches_closed_form(spec):
    expectations = {
        "quantum": 78.895,
        "lens_a": 196.321,
        "lens_b": 156.570,
        "classical": 273.993,
    }
    for region, expect in expectations.items():
        size, err = region_size(region, spec, 1, mc_samples=400_000, seed=23)
        assert err > 0
        assert abs(size - expect) <= max(4.0 * err, 0.05)


def test_region_size_3d_sphere_limit():
    ball = RegionSpec(
        radius_a=10.0, radius_b=1e6, ellipse_ab=1e6, ellipse_ba=1e6, d_sep=20.0
    )
    size, err = region_size("quantum", ball, 3, mc_samples=400_000, seed=29)
    assert abs(size - sphere_volume(10.0)) <= 4.0 * err


def test_region_size_3d_matches_direct_oracle(spec):
    size, err = region_size("quantum", spec, 3, mc_samples=500_000, seed=31)
    lo, hi = axis_interval("quantum", spec)
    span = hi - lo
    oracle, oerr = direct_3d_volume(
        quantum_lengths_ok, spec, (lo - 0.02 * span, hi + 0.02 * span),
        spec.radius_b * 1.02, 500_000, seed=33,
    )
    assert abs(size - oracle) <= 4.0 * math.hypot(err, oerr)
    union, uerr = region_size("classical", spec, 3, mc_samples=500_000, seed=35)
    uoracle, uoerr = direct_3d_volume(
        classical_lengths_ok, spec, (-45.0, 240.0), spec.radius_a * 1.02,
        500_000, seed=37,
    )
    assert abs(union - uoracle) <= 4.0 * math.hypot(uerr, uoerr)


def test_region_size_deterministic_and_threaded(spec):
    a = region_size("quantum", spec, 2, mc_samples=300_000, seed=41)
    b = region_size("quantum", spec, 2, mc_samples=300_000, seed=41)
    assert a == b
    c = region_size("quantum", spec, 2, mc_samples=300_000, seed=41, threads=4)
    assert c == a
    d = region_size("quantum", spec, 2, mc_samples=300_000, seed=42)
    assert d != a


def test_region_size_rule_of_three_bound():
    # Nonempty bounding box, empty region: the sum cap is unreachable.
    hollow = RegionSpec(
        radius_a=100.0, radius_b=100.0, ellipse_ab=10.0, ellipse_ba=10.0, d_sep=50.0
    )
    size, bound = region_size("quantum", hollow, 1, mc_samples=10_000)
    assert size == 0.0
    assert bound > 0.0


def test_region_size_validation(spec):
    with pytest.raises(ValueError):
        region_size("quantum", spec, 4)
    with pytest.raises(ValueError):
        region_size("donut", spec, 2)


def test_quantum_advantage_reference_bands(tg):
    for (dim, comparator), (expect, spread) in REFERENCE_ADVANTAGE.items():
        res = quantum_advantage(
            tg, dim, comparator, mc_outer=20_000, mc_inner=200_000, seed=11
        )
        assert not res.degenerate
        assert res.empty_fraction <= 0.01
        assert abs(res.ratio - expect) <= 3.0 * max(spread, 0.02) + 0.05
        assert res.sigma == pytest.approx(spread, abs=3.0 * spread)
        assert res.samples.size <= 20_000


def test_quantum_advantage_deterministic(tg):
    a = quantum_advantage(tg, 1, "comparable", mc_outer=5_000, mc_inner=100_000, seed=7)
    b = quantum_advantage(tg, 1, "comparable", mc_outer=5_000, mc_inner=100_000, seed=7)
    assert a.ratio == b.ratio and a.sigma == b.sigma


def test_quantum_advantage_zero_uncertainty_matches_closed_form(tg):
    exact = TimingGeometry(
        s_vap_ns=tg.s_vap_ns, s_vb_ns=tg.s_vb_ns,
        r_vap_ns=tg.r_vap_ns, r_vb_ns=tg.r_vb_ns, d_sep_m=tg.d_sep_m,
    )
    res = quantum_advantage(exact, 1, "comparable", mc_outer=200, mc_inner=1_000_000, seed=3)
    assert res.sigma <= 1e-12
    assert res.ratio == pytest.approx((196.321 + 156.570) / 78.895, rel=0.02)
    ideal = quantum_advantage(exact, 1, "ideal", mc_outer=200, mc_inner=1_000_000, seed=3)
    assert ideal.ratio == pytest.approx(195.1 / 78.895, rel=0.02)


def test_quantum_advantage_ideal_degenerate_above_1d(tg):
    for dim in (2, 3):
        res = quantum_advantage(tg, dim, "ideal", mc_outer=2_000, mc_inner=10_000, seed=5)
        assert res.degenerate
        assert res.ratio == math.inf
        assert res.samples.size == 0


def test_quantum_advantage_empty_aborts():
    marginal = TimingGeometry(
        s_vap_ns=1000.0, s_vb_ns=1000.0, r_vap_ns=1000.1, r_vb_ns=2000.0,
        d_sep_m=50.0, r_vap_sigma_ns=0.5,
    )
    with pytest.raises(EmptyRegionError, match="empty quantum region"):
        quantum_advantage(marginal, 1, "comparable", mc_outer=5_000, mc_inner=10_000)
    shaky_d = TimingGeometry(
        s_vap_ns=1000.0, s_vb_ns=1000.0, r_vap_ns=2000.0, r_vb_ns=2000.0,
        d_sep_m=0.5, d_sep_sigma_m=0.3,
    )
    with pytest.raises(EmptyRegionError, match="separation"):
        quantum_advantage(shaky_d, 1, "comparable", mc_outer=5_000, mc_inner=10_000)


def test_quantum_advantage_validation(tg):
    with pytest.raises(ValueError):
        quantum_advantage(tg, 4, "comparable", mc_outer=100, mc_inner=100)
    with pytest.raises(ValueError):
        quantum_advantage(tg, 1, "best", mc_outer=100, mc_inner=100)


def test_speed_of_light_constant():
    assert SPEED_OF_LIGHT_M_PER_NS == pytest.approx(0.299792458, rel=0.0)
