import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperdyne.constants import AXIS_001, AXIS_111, GAMMA_1H, GAMMA_E, WATER_PROTON_DENSITY
from hyperdyne.physics import (NuclearSpecies, NVSensor, brms_analytic, dipolar_coupling, larmor_frequency,
                               validate_phase_condition)

from oracles import brms_monte_carlo, dipole_tensor_coupling

coords = st.floats(-20e-9, 20e-9, allow_nan=False)


def test_sensor_validation():
    with pytest.raises(ValueError):
        NVSensor(0.0)
    with pytest.raises(ValueError):
        NVSensor(5e-9, p_bright=0.02, p_dark=0.03)
    nv = NVSensor(5e-9, axis=(0, 0, 3))
    assert np.linalg.norm(nv.axis) == pytest.approx(1.0, abs=1e-12)


def test_coupling_on_axis_scales_as_inverse_cube():
    nv = NVSensor(5e-9)
    # off-axis point on the ray through the NV so both components are non-zero
    u = np.array([0.3, 0.2, 0.9]) / np.linalg.norm([0.3, 0.2, 0.9])
    a = dipolar_coupling(nv, nv.position + 4e-9 * u)
    b = dipolar_coupling(nv, nv.position + 8e-9 * u)
    assert a.a_z / b.a_z == pytest.approx(8.0, rel=1e-12)
    assert a.a_x / b.a_x == pytest.approx(8.0, rel=1e-12)


def test_magic_angle_zero_az():
    nv = NVSensor(5e-9)
    c = 1 / math.sqrt(3)
    pos = nv.position + 3e-9 * np.array([math.sqrt(1 - c * c), 0.0, c])
    assert abs(dipolar_coupling(nv, pos).a_z) < 1e-9 * abs(dipolar_coupling(nv, pos).a_x)


@pytest.mark.parametrize("axis", [AXIS_001, AXIS_111])
def test_coupling_matches_tensor_oracle(axis):
    nv = NVSensor(5e-9, axis=axis)
    rng = np.random.default_rng(7)
    e1, e2, n = nv.frame()
    for _ in range(20):
        u = rng.normal(size=3)
        pos = nv.position + 5e-9 * u / np.linalg.norm(u)
        got = dipolar_coupling(nv, pos)
        want = dipole_tensor_coupling(nv.position, n, e1, e2, pos)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9 * max(map(abs, want)))


def test_zero_distance_is_domain_error():
    nv = NVSensor(5e-9)
    with pytest.raises(ValueError):
        dipolar_coupling(nv, nv.position)


@settings(max_examples=60, deadline=None)
@given(coords, coords, st.floats(0.5e-9, 20e-9), st.floats(0, 2 * math.pi))
def test_coupling_symmetries(x, y, z, angle):
    nv = NVSensor(4e-9)
    pos = np.array([x, y, z])
    a = dipolar_coupling(nv, pos)
    # reflecting the transverse coordinate flips the transverse components
    m = dipolar_coupling(nv, np.array([-x, -y, z]))
    assert m.a_x == pytest.approx(-a.a_x, rel=1e-9, abs=1e-12)
    assert m.a_z == pytest.approx(a.a_z, rel=1e-9, abs=1e-12)
    # rotation about the NV axis keeps the magnitudes
    c, s = math.cos(angle), math.sin(angle)
    r = dipolar_coupling(nv, np.array([c * x - s * y, s * x + c * y, z]))
    assert r.a_perp == pytest.approx(a.a_perp, rel=1e-9, abs=1e-12)
    assert r.a_z == pytest.approx(a.a_z, rel=1e-9, abs=1e-12)


def test_brms_scaling_laws():
    sp = NuclearSpecies()
    b1 = brms_analytic(NVSensor(5e-9), sp)
    assert (b1 / brms_analytic(NVSensor(10e-9), sp)) ** 2 == pytest.approx(8.0, rel=1e-12)
    dense = NuclearSpecies(density=2 * sp.density)
    assert (brms_analytic(NVSensor(5e-9), dense) / b1) ** 2 == pytest.approx(2.0, rel=1e-12)


def test_brms_loglog_slope():
    sp = NuclearSpecies()
    d = np.geomspace(3e-9, 30e-9, 9)
    b2 = [brms_analytic(NVSensor(x), sp) ** 2 for x in d]
    slope = np.polyfit(np.log(d), np.log(b2), 1)[0]
    assert slope == pytest.approx(-3.0, abs=1e-3)


@pytest.mark.parametrize("axis", [AXIS_001, AXIS_111])
def test_brms_matches_monte_carlo(axis):
    nv = NVSensor(6.2e-9, axis=axis)
    got = brms_analytic(nv, NuclearSpecies())
    want = brms_monte_carlo(6.2e-9, WATER_PROTON_DENSITY, nv.axis)
    assert got == pytest.approx(want, rel=5e-3)


def test_brms_water_value():
    # about 0.66 uT for a 6.2 nm NV under water
    assert brms_analytic(NVSensor(6.2e-9), NuclearSpecies()) == pytest.approx(6.61e-7, rel=0.01)


def test_larmor():
    assert larmor_frequency(0.0) == 0.0
    assert larmor_frequency(0.3, -GAMMA_1H) == -larmor_frequency(0.3, GAMMA_1H)
    assert larmor_frequency(0.3) == GAMMA_1H * 0.3


def test_phase_condition():
    ok = validate_phase_condition(0.0, 1e-6)
    assert ok.passed and ok.ratio == 0.0
    tau = 2e-6
    quarter = validate_phase_condition((math.pi / 4) / (GAMMA_E * tau), tau)
    assert quarter.passed and quarter.ratio == pytest.approx(0.5, rel=1e-12)
    # construct the boundary so the ratio is exactly 1 in floating point
    b = None
    for cand in np.nextafter((math.pi / 2) / (GAMMA_E * tau), [0, np.inf]):
        if GAMMA_E * cand * tau / (math.pi / 2) == 1.0:
            b = cand
    b = (math.pi / 2) / (GAMMA_E * tau) if b is None else b
    at = validate_phase_condition(b, tau)
    assert at.ratio >= 1.0 - 1e-15
    if at.ratio >= 1.0:
        assert not at.passed
    with pytest.raises(ValueError):
        validate_phase_condition(-1.0, tau)
