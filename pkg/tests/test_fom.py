import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpmap.emfield import FieldMap, MU0
from pumpmap.errors import (MissingConstantError, NonPositiveInputError, RegionEmptyError,
                            UnnormalizedInputError, ZeroDetectorPowerError)
from pumpmap.fom import (SpinSystemConstants, align_to_field, cooperativity, correction_factor_from_fractions,
                         gamma_from_threshold, overlap_delta, qm_from_gamma, region_center, uniform_delta,
                         uniform_grid)
from pumpmap.scene import REGION_CODES
from pumpmap.tracer import VoxelGrid

CRYSTAL = REGION_CODES["crystal"]


def cylinder_grid(pitch, radius=3.0, length=8.0, rho=lambda x, y, z: np.ones_like(z), z_lo=-4.0):
    n_xy = int(round(2 * radius / pitch))
    n_z = int(round(length / pitch))
    origin = np.array([-radius, -radius, z_lo])
    c = [origin[a] + (np.arange(n) + 0.5) * pitch for a, n in enumerate((n_xy, n_xy, n_z))]
    X, Y, Z = np.meshgrid(*c, indexing="ij")
    inside = X ** 2 + Y ** 2 <= radius ** 2
    values = np.where(inside, rho(X, Y, Z), 0.0)
    g = VoxelGrid(origin, pitch, values, np.where(inside, CRYSTAL, 0).astype(np.uint8))
    return g.normalized("crystal")


def uniform_field(b2=1.0, radius=20.0, height=20.0):
    """Constant |B|^2 field on a cylinder, renormalised to 1 J."""
    nr, nz = 21, 21
    f = FieldMap(0.0, -0.5 * height, radius / (nr - 1), height / (nz - 1), np.zeros((nz, nr)),
                 np.full((nz, nr), math.sqrt(b2)), 1.0)
    return f.normalized()


def z_field(fz, radius=20.0, height=20.0, nr=21, nz=401):
    """Field with |B|^2 = fz(z) and no radial dependence (not normalised)."""
    z = -0.5 * height + np.arange(nz) * height / (nz - 1)
    bz = np.sqrt(np.broadcast_to(fz(z)[:, None], (nz, nr)))
    return FieldMap(0.0, z[0], radius / (nr - 1), height / (nz - 1), np.zeros((nz, nr)), bz.copy(), 1.0)


def test_single_voxel_delta():
    f = uniform_field()
    g = VoxelGrid((0.0, 0.0, 0.0), 0.5, np.array([[[8.0]]]), np.array([[[CRYSTAL]]]))
    b2 = f.b2[0, 0]
    assert overlap_delta(g, f) == pytest.approx(b2, rel=1e-12)
    assert b2 == pytest.approx(2 * MU0 / (math.pi * 400 * 20 * 1e-9), rel=1e-9)


def test_constant_field_gives_its_value():
    f = uniform_field()
    g = cylinder_grid(0.25, rho=lambda x, y, z: np.exp(-z))
    assert overlap_delta(g, f) == pytest.approx(f.b2[0, 0], rel=1e-12)
    assert uniform_delta(f, "crystal", g) == pytest.approx(f.b2[0, 0], rel=1e-12)


def test_separable_polynomial_overlap():
    # rho ~ (1 + z/4), |B|^2 = 1 + z^2: closed form over z in [-4, 4]
    f = z_field(lambda z: 1.0 + z ** 2)
    g = cylinder_grid(0.1, rho=lambda x, y, z: 1.0 + z / 4.0)
    z = np.linspace(-4, 4, 200001)
    rho = (1 + z / 4) / 8.0
    from scipy.integrate import trapezoid
    expect = trapezoid(rho * (1 + z ** 2), z)
    assert expect == pytest.approx(1 + 16 / 3, rel=1e-9)
    assert overlap_delta(g, f, check_normalization=False) == pytest.approx(expect, rel=1e-3)


def test_uniform_delta_matches_overlap_on_uniform_grid(reference_mode):
    _, f = reference_mode
    g = cylinder_grid(0.2, rho=lambda x, y, z: np.exp(-(z + 4)))
    u = uniform_grid(g)
    assert u.integral("crystal") == pytest.approx(1.0, rel=1e-12)
    assert overlap_delta(u, f) == pytest.approx(uniform_delta(f, "crystal", g), rel=1e-12)


@given(st.floats(0.1, 10), st.floats(0.1, 10))
@settings(max_examples=25)
def test_bilinearity(a, b):
    f = z_field(lambda z: 1.0 + 0.1 * z ** 2)
    g = cylinder_grid(0.5, rho=lambda x, y, z: 2.0 + np.sin(z))
    base = overlap_delta(g, f, check_normalization=False)
    g2 = VoxelGrid(g.origin, g.pitch, g.values * a, g.region_mask)
    f2 = FieldMap(f.r0, f.z0, f.dr, f.dz, f.B_r, f.B_z * math.sqrt(b), f.freq_ghz)
    assert overlap_delta(g2, f2, check_normalization=False) == pytest.approx(a * b * base, rel=1e-10)


def test_additivity_in_rho():
    f = z_field(lambda z: 1.0 + 0.1 * z ** 2)
    g1 = cylinder_grid(0.5, rho=lambda x, y, z: np.exp(z / 4))
    g2 = cylinder_grid(0.5, rho=lambda x, y, z: 1.0 + x ** 2)
    gs = VoxelGrid(g1.origin, g1.pitch, g1.values + g2.values, g1.region_mask)
    total = overlap_delta(gs, f, check_normalization=False)
    parts = overlap_delta(g1, f, check_normalization=False) + overlap_delta(g2, f, check_normalization=False)
    assert total == pytest.approx(parts, rel=1e-12)


@given(st.floats(-3.0, 3.0))
@settings(max_examples=20)
def test_translation_invariance(shift):
    # translate both the grid and the field: Delta unchanged
    f = z_field(lambda z: 1.0 + 0.05 * z ** 2, height=40.0).normalized()
    g = cylinder_grid(0.5, rho=lambda x, y, z: np.exp(-z / 3))
    d0 = overlap_delta(g, f)
    d1 = overlap_delta(g.translated((0, 0, shift)), f.translated(shift))
    assert d1 == pytest.approx(d0, rel=1e-9)


def test_normalisation_idempotent_grid():
    g = cylinder_grid(0.5, rho=lambda x, y, z: np.exp(-z))
    h = g.normalized("crystal")
    assert np.allclose(h.values, g.values, rtol=1e-14, atol=0)
    assert h.integral("crystal") == pytest.approx(1.0, rel=1e-14)


def test_pitch_halving_converges(reference_mode):
    _, f = reference_mode
    rho = lambda x, y, z: np.exp(-2.0 * (z + 4.0))
    coarse = overlap_delta(cylinder_grid(0.2, rho=rho), f)
    fine = overlap_delta(cylinder_grid(0.1, rho=rho), f)
    assert abs(fine / coarse - 1) < 0.02


def test_unnormalised_inputs_rejected():
    f = uniform_field()
    g = cylinder_grid(0.5)
    with pytest.raises(UnnormalizedInputError):
        overlap_delta(VoxelGrid(g.origin, g.pitch, 2 * g.values, g.region_mask), f)
    f2 = FieldMap(f.r0, f.z0, f.dr, f.dz, f.B_r, 2 * f.B_z, f.freq_ghz)
    with pytest.raises(UnnormalizedInputError):
        overlap_delta(g, f2)


def test_empty_region_rejected():
    f = uniform_field()
    g = VoxelGrid((0, 0, 0), 1.0, np.ones((2, 2, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(RegionEmptyError):
        overlap_delta(g, f)
    with pytest.raises(RegionEmptyError):
        uniform_grid(g)


def test_align_to_field_centres_region():
    g = cylinder_grid(0.5, z_lo=10.0)
    h = align_to_field(g, "crystal", 1.25)
    assert region_center(h)[2] == pytest.approx(1.25, abs=1e-12)
    assert np.array_equal(h.values, g.values)


def _constants(**kw):
    base = dict(sigma2=0.5, theta_isc_eff=0.6, t1_eff_s=2e-5, t2_star_s=6e-7, omega_opt_rad_s=3.3e15,
                q_loaded=6000.0)
    base.update(kw)
    return SpinSystemConstants(**base)


@given(st.just(0.0) | st.floats(1e-9, 100.0), st.floats(1e-6, 1.0))
@settings(max_examples=30)
def test_cooperativity_linear_in_power_and_delta(p, d):
    c = _constants()
    one = cooperativity(c, 1.0, 1.0)
    assert cooperativity(c, d, p) == pytest.approx(one * p * d, rel=1e-12, abs=0)


def test_cooperativity_linear_in_loaded_q():
    assert cooperativity(_constants(q_loaded=3000.0), 1.0, 1.0) == pytest.approx(
        0.5 * cooperativity(_constants(), 1.0, 1.0), rel=1e-14)
    assert cooperativity(_constants(), 1.0, 0.0) == 0.0


def test_cooperativity_ratio_equals_delta_ratio():
    c = _constants()
    assert cooperativity(c, 4.6e-3, 1.0) / cooperativity(c, 2.2e-3, 1.0) == pytest.approx(4.6 / 2.2, rel=1e-12)


def test_constants_validation():
    with pytest.raises(NonPositiveInputError):
        _constants(t1_eff_s=0.0)
    with pytest.raises(NonPositiveInputError):
        _constants(theta_isc_eff=1.5)
    with pytest.raises(MissingConstantError):
        SpinSystemConstants.from_dict({"sigma2": 1.0})
    with pytest.raises(MissingConstantError):
        cooperativity(None, 1.0, 1.0)
    with pytest.raises(MissingConstantError):
        SpinSystemConstants.literature_placeholder()
    c = SpinSystemConstants.from_dict({"profile": "literature_placeholder", "acknowledge_placeholder": True})
    assert c.placeholder


def test_threshold_arithmetic():
    assert gamma_from_threshold(3.3, 3.3) == 1.0
    assert gamma_from_threshold(6.0, 3.3) == pytest.approx(1.8181818, rel=1e-7)
    assert round(gamma_from_threshold(6.0, 3.3), 2) == 1.82
    assert gamma_from_threshold(9.9, 3.3) == pytest.approx(3.0, rel=1e-15)
    assert qm_from_gamma(6000, 2) == 3000
    assert qm_from_gamma(8900, 4500) == pytest.approx(1.9778, rel=1e-4)
    with pytest.raises(NonPositiveInputError):
        gamma_from_threshold(6.0, 0.0)
    with pytest.raises(NonPositiveInputError):
        qm_from_gamma(6000, 0.0)


def test_correction_factor_from_fractions():
    assert correction_factor_from_fractions(0.9, 0.9) == 1.0
    assert correction_factor_from_fractions(0.9, 0.84) == pytest.approx(1.0714, rel=1e-4)
    with pytest.raises(ZeroDetectorPowerError):
        correction_factor_from_fractions(0.9, 0.0)
