import numpy as np
import pytest

from mmwslam import geometry
from mmwslam.geometry import (GeometryError, Source, SourceType,
                              incidence_point, jacobian, measure,
                              va_from_incidence, wrap_measurement_diff)
from mmwslam.motion import make_state, wrap_angle

from oracles import sp_range_gradient

BS0 = np.zeros(3)


def test_los_example():
    st = make_state(x=100.0)
    z = measure(SourceType.BS, BS0, st, BS0)
    np.testing.assert_allclose(z, [100.0, 0.0, np.pi, 0.0, 0.0],
                               atol=1e-12)


def test_va_example_with_incidence():
    va = np.array([200.0, 0.0, 0.0])
    st = make_state(x=50.0)
    z = measure(SourceType.VA, va, st, BS0)
    np.testing.assert_allclose(z, [150.0, 0.0, 0.0, 0.0, 0.0], atol=1e-12)
    xs = incidence_point(va, BS0, st[:3])
    np.testing.assert_allclose(xs, [100.0, 0.0, 0.0], atol=1e-12)
    # two-leg path length equals the mirror distance
    path = np.linalg.norm(BS0 - xs) + np.linalg.norm(xs - st[:3])
    assert abs(path - 150.0) < 1e-9


def test_sp_example():
    st = make_state(x=100.0)
    z = measure(SourceType.SP, [50.0, 50.0, 0.0], st, BS0)
    np.testing.assert_allclose(
        z, [100 * np.sqrt(2), 0.0, 3 * np.pi / 4, 0.0, np.pi / 4],
        atol=1e-6)


def test_incidence_point_examples():
    np.testing.assert_allclose(
        incidence_point([200, 0, 0], BS0, [50, 0, 0]), [100, 0, 0],
        atol=1e-12)
    # vehicle on the reflecting plane: the incidence point is the vehicle
    v = np.array([100.0, 20.0, 0.0])
    np.testing.assert_allclose(incidence_point([200, 0, 0], BS0, v), v,
                               atol=1e-9)
    # reference-scenario VA: plane y = 100
    bs = np.array([0.0, 0.0, 40.0])
    xs = incidence_point([0.0, 200.0, 40.0], bs, [70.7285, 0.0, 0.0])
    assert abs(xs[1] - 100.0) < 1e-9


def test_incidence_point_degenerate_raises():
    # vehicle in the plane through the VA parallel to the reflector
    with pytest.raises(GeometryError):
        incidence_point([200.0, 0.0, 0.0], BS0, [200.0, 55.0, 3.0])


def test_va_from_incidence_examples():
    np.testing.assert_allclose(
        va_from_incidence([100, 0, 0], BS0, [50, 0, 0]), [200, 0, 0],
        atol=1e-12)
    np.testing.assert_allclose(
        va_from_incidence([1.0, 1.0, 0.0], BS0, [2.0, 0.0, 0.0]),
        [0.0, 2.0, 0.0], atol=1e-12)
    with pytest.raises(GeometryError):
        va_from_incidence([2.0, 0.0, 0.0], BS0, [2.0, 0.0, 0.0])


def random_reflection_geometry(rng, bs):
    """A reflecting plane with the vehicle on the BS side (so that the
    specular path exists), returning (va, v)."""
    normal = rng.standard_normal(3)
    normal /= np.linalg.norm(normal)
    f = bs + rng.uniform(20.0, 150.0) * normal \
        + np.cross(normal, rng.standard_normal(3))
    if np.dot(bs - f, normal) > 0:
        normal = -normal
    va = bs - 2.0 * np.dot(bs - f, normal) * normal
    v = f + rng.uniform(5.0, 150.0) * (-normal) \
        + np.cross(normal, rng.standard_normal(3)) * rng.uniform(0, 40)
    return va, v


def test_va_round_trip_property():
    rng = np.random.default_rng(1)
    bs = np.array([0.0, 0.0, 40.0])
    for _ in range(200):
        va, v = random_reflection_geometry(rng, bs)
        xs = incidence_point(va, bs, v)
        if np.linalg.norm(xs - v) < 1e-6:
            continue
        back = va_from_incidence(xs, bs, v)
        np.testing.assert_allclose(back, va, atol=1e-6)


def test_pseudorange_triangle_identity():
    rng = np.random.default_rng(2)
    bs = np.array([0.0, 0.0, 40.0])
    for _ in range(50):
        va = rng.uniform(-250, 250, 3)
        st = make_state(*rng.uniform(-60, 60, 2), 0.0,
                        rng.uniform(-np.pi, np.pi), 10.0, 0.1,
                        rng.uniform(0, 400))
        den = np.dot(st[:3] - va, (bs - va) / np.linalg.norm(bs - va))
        if abs(den) < 1.0:
            continue
        z = measure(SourceType.VA, va, st, bs)
        xs = incidence_point(va, bs, st[:3])
        two_leg = (np.linalg.norm(bs - xs) + np.linalg.norm(xs - st[:3])
                   + st[6])
        assert abs(z[0] - two_leg) < 1e-6


@pytest.mark.parametrize("kind,loc", [
    (SourceType.BS, [0.0, 0.0, 40.0]),
    (SourceType.VA, [200.0, 0.0, 40.0]),
    (SourceType.SP, [65.0, 65.0, 10.0]),
])
def test_heading_shift_moves_only_doa_azimuth(kind, loc):
    bs = np.array([0.0, 0.0, 40.0])
    st = make_state(30.0, -40.0, 0.0, 0.7, 20.0, 0.1, 300.0)
    delta = 1.234
    shifted = st.copy()
    shifted[3] = wrap_angle(st[3] + delta)
    z0 = measure(kind, loc, st, bs)
    z1 = measure(kind, loc, shifted, bs)
    d = wrap_measurement_diff(z1 - z0)
    np.testing.assert_allclose(d[geometry.IDX_DOA_AZ], -delta, atol=1e-12)
    for i in (0, geometry.IDX_DOA_EL, geometry.IDX_DOD_EL,
              geometry.IDX_DOD_AZ):
        assert abs(d[i]) < 1e-12


@pytest.mark.parametrize("kind,loc", [
    (SourceType.BS, [0.0, 0.0, 40.0]),
    (SourceType.VA, [0.0, 200.0, 40.0]),
    (SourceType.SP, [65.0, -65.0, 25.0]),
])
def test_bias_shift_moves_only_pseudorange(kind, loc):
    bs = np.array([0.0, 0.0, 40.0])
    st = make_state(30.0, -40.0, 0.0, 0.7, 20.0, 0.1, 300.0)
    shifted = st.copy()
    shifted[6] += 17.25
    z0 = measure(kind, loc, st, bs)
    z1 = measure(kind, loc, shifted, bs)
    assert abs((z1[0] - z0[0]) - 17.25) < 1e-12
    np.testing.assert_allclose(z1[1:], z0[1:], atol=1e-12)


def test_jacobian_sp_range_row_example():
    st = make_state(x=100.0)
    jac = jacobian([50.0, 0.0, 0.0], st, SourceType.SP, BS0)
    # gradient components along x cancel: unit(SP-BS) + unit(SP-v) = 0
    assert abs(jac[0, 0]) < 1e-9


def test_jacobian_sp_elevation_sign():
    st = make_state(x=100.0)
    jac = jacobian([50.0, 0.0, 0.0], st, SourceType.SP, BS0)
    assert jac[geometry.IDX_DOA_EL, 2] > 0.0


def test_jacobian_finite_for_scenario_sources():
    bs = np.array([0.0, 0.0, 40.0])
    st = make_state(70.7285, 0.0, 0.0, np.pi / 2, 22.22, np.pi / 10, 300.0)
    for kind, loc in [(SourceType.VA, [200.0, 0.0, 40.0]),
                      (SourceType.SP, [65.0, 65.0, 10.0]),
                      (SourceType.BS, bs)]:
        assert np.all(np.isfinite(jacobian(loc, st, kind, bs)))


def test_jacobian_matches_analytic_range_gradient():
    rng = np.random.default_rng(3)
    bs = np.array([0.0, 0.0, 40.0])
    for _ in range(100):
        sp = rng.uniform(-80, 80, 3)
        st = make_state(*rng.uniform(-60, 60, 2), 0.0,
                        rng.uniform(-np.pi, np.pi), 20.0, 0.1, 300.0)
        if (np.linalg.norm(sp - st[:3]) < 5.0
                or np.linalg.norm(sp - bs) < 5.0):
            continue
        jac = jacobian(sp, st, SourceType.SP, bs)
        np.testing.assert_allclose(jac[0], sp_range_gradient(sp, bs, st[:3]),
                                   atol=1e-4)


def test_measurement_wrapping_and_source_type():
    st = make_state(x=-100.0)  # vehicle on the negative x axis
    z = measure(SourceType.BS, BS0, st, BS0)
    assert -np.pi < z[geometry.IDX_DOA_AZ] <= np.pi
    assert z[0] >= 0
    with pytest.raises(ValueError):
        Source(SourceType.SP, [np.inf, 0, 0])
    s = Source(SourceType.VA, [1.0, 2.0, 3.0])
    assert s.kind is SourceType.VA


def test_wrap_angle_interval():
    a = np.array([-np.pi, np.pi, 0.0, 3 * np.pi / 2, -3 * np.pi / 2,
                  7.0, -7.0])
    w = wrap_angle(a)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    np.testing.assert_allclose(np.mod(w - a, 2 * np.pi), 0.0, atol=1e-12)
    assert wrap_angle(np.pi) == np.pi
