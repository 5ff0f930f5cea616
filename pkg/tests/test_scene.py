import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pumpmap.errors import DegenerateRayError, InvalidConfigError
from pumpmap.scene import (REGION_CODES, CrystalConfig, DetectorConfig, Ray, SceneConfig, build_scene, contains,
                           contains_many, crystal_volume_analytic, intersect, intersect_many,
                           tip_edge_curves, tip_facet_planes, write_obj)


def wedge_scene(angle=40.0, style="wedge", **crystal):
    cr = dict(diameter_mm=8.0, length_mm=8.0, insertion_depth_mm=7.5)
    cr.update(crystal)
    return build_scene(SceneConfig(tip_style=style, tip_full_angle_deg=angle, crystal=CrystalConfig(**cr)))


def test_flat_tip_has_no_facets():
    sc = build_scene(SceneConfig(tip_style="flat"))
    assert sc.tip_planes == []
    rod = sc.solids_tagged("waveguide")[0]
    assert rod.planes == ()


def test_wedge_normals_subtend_supplement_of_full_angle():
    planes = tip_facet_planes((0, 0, 10), "wedge", 53.13)
    n1, n2 = (np.array(p[0]) for p in planes)
    between = math.degrees(math.acos(np.clip(n1 @ n2, -1, 1)))
    assert between == pytest.approx(126.87, abs=1e-9)


def test_spear_has_three_facets_and_elliptical_edges(tmp_path):
    sc = wedge_scene(style="spear")
    assert len(sc.tip_planes) == 3
    curves = tip_edge_curves(sc)
    assert len(curves) == 3
    r = sc.solids_tagged("waveguide")[0].radius
    for c in curves:
        # edge points lie on the shank cylinder and on their facet plane
        assert np.allclose(np.hypot(c[:, 0], c[:, 1]), r, atol=1e-12)
        z_span = c[:, 2].max() - c[:, 2].min()
        assert z_span > 0
    write_obj(sc, tmp_path / "tip.obj")
    text = (tmp_path / "tip.obj").read_text()
    assert text.count("\nl ") == 3


@pytest.mark.parametrize("style,angle", [("wedge", 40.0), ("spear", 40.0), ("wedge", 120.0), ("spear", 120.0)])
def test_facets_contain_apex_on_axis(style, angle):
    sc = wedge_scene(angle, style, diameter_mm=6.0, insertion_depth_mm=7.8)
    assert sc.apex[0] == 0 and sc.apex[1] == 0
    for n, d in sc.tip_planes:
        assert np.dot(n, sc.apex) == pytest.approx(d, abs=1e-12)


def test_axial_ray_hits_coupling_interface_at_layer_thickness():
    sc = build_scene(SceneConfig(tip_style="flat"))
    hit = intersect(Ray(np.array([0.0, 0.0, sc.led_z]), np.array([0.0, 0.0, 1.0])), sc)
    assert hit.distance == pytest.approx(0.05, abs=1e-12)
    assert hit.region_tag_after == "waveguide"
    assert hit.material_before.name == "coupling_fluid"


def test_grazing_ray_sees_radial_wall_normal():
    sc = build_scene(SceneConfig(tip_style="flat", crystal=None))
    r = 2.5
    o = np.array([-3.0, r - 1e-4, 50.0])
    d = np.array([1.0, 0.0, 1e-3])
    hit = intersect(Ray(o, d / np.linalg.norm(d)), sc)
    p = hit.point
    radial = np.array([p[0], p[1], 0.0]) / np.hypot(p[0], p[1])
    assert abs(abs(hit.normal @ radial) - 1.0) < 1e-9
    assert hit.normal @ (d / np.linalg.norm(d)) < 0


def test_zero_direction_is_degenerate():
    sc = build_scene(SceneConfig())
    with pytest.raises(DegenerateRayError):
        intersect(Ray(np.zeros(3), np.zeros(3)), sc)


def test_contains_examples():
    sc = wedge_scene()
    assert contains((0, 0, 60.0), sc) == "waveguide"
    assert contains((4.1, 0, 126.0), sc) == "air"
    assert contains((3.5, 0, 126.0), sc) == "crystal"
    assert contains((0, 0, -0.02), sc) == "coupling"


@pytest.mark.parametrize("style,ins", [("flat", 0.0), ("flat", 3.0), ("wedge", 7.5)])
def test_crystal_volume_by_point_sampling(style, ins, rng):
    cfg = SceneConfig(tip_style=style, tip_full_angle_deg=40.0,
                      crystal=CrystalConfig(diameter_mm=8.0, length_mm=8.0, insertion_depth_mm=ins))
    sc = build_scene(cfg)
    lo, hi = sc.region_aabb("crystal")
    n = 400_000
    pts = lo + rng.random((n, 3)) * (hi - lo)
    frac = np.mean(contains_many(pts, sc) == REGION_CODES["crystal"])
    vol = frac * np.prod(hi - lo)
    assert vol == pytest.approx(crystal_volume_analytic(cfg), rel=0.01)


def test_invalid_configs_rejected():
    with pytest.raises(InvalidConfigError):
        build_scene(SceneConfig(tip_full_angle_deg=180.0))
    with pytest.raises(InvalidConfigError):
        build_scene(SceneConfig(crystal=CrystalConfig(diameter_mm=-1)))
    with pytest.raises(InvalidConfigError):
        build_scene(SceneConfig(tip_style="cone"))
    with pytest.raises(InvalidConfigError):
        # tip longer than the insertion: apex region not enclosed
        wedge_scene(40.0, insertion_depth_mm=3.0)
    with pytest.raises(InvalidConfigError):
        wedge_scene(40.0, diameter_mm=4.0)


def _random_rays(sc, rng, n):
    lo, hi = sc.bbox_lo, sc.bbox_hi
    o = lo + rng.random((n, 3)) * (hi - lo)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return o, d


def test_no_self_intersection_after_nudge(rng):
    sc = wedge_scene(120.0, "spear", diameter_mm=6.0, insertion_depth_mm=7.8)
    # concentrate origins around the tip where the geometry is busiest
    n = 200_000
    o = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-3, 3, n), rng.uniform(120, 131, n)])
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    t, _, _, _ = intersect_many(o, d, sc)
    ok = np.isfinite(t)
    eps = 1e-6
    p = o[ok] + (t[ok] + eps)[:, None] * d[ok]
    t2, _, _, _ = intersect_many(p, d[ok], sc)
    assert np.all(~np.isfinite(t2) | (t2 >= eps))


def test_chord_sum_equals_box_chord(rng):
    sc = wedge_scene(120.0, "wedge", diameter_mm=6.0, insertion_depth_mm=7.8)
    o, d = _random_rays(sc, rng, 300)
    for oi, di in zip(o, d):
        total = 0.0
        p = oi.copy()
        for _ in range(100):
            hit = intersect(Ray(p, di), sc)
            if hit is None:
                break
            total += hit.distance
            p = oi + total * di
        total_exit = sc.exit_distance(oi, di)
        assert total <= total_exit + 1e-9


@given(st.floats(-2.9, 2.9), st.floats(-2.9, 2.9), st.floats(120.0, 131.0),
       st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_hit_material_matches_contains(x, y, z, dx, dy, dz):
    d = np.array([dx, dy, dz])
    if np.linalg.norm(d) < 1e-3:
        return
    d /= np.linalg.norm(d)
    sc = _PROPERTY_SCENE
    hit = intersect(Ray(np.array([x, y, z]), d), sc)
    if hit is None:
        return
    assert abs(np.linalg.norm(hit.normal) - 1.0) < 1e-12
    assert hit.normal @ d < 0
    assert hit.distance > 0
    probe = hit.point + 1e-6 * d
    assert contains(probe, sc) == hit.region_tag_after


_PROPERTY_SCENE = build_scene(SceneConfig(tip_style="spear", tip_full_angle_deg=120.0,
                                          crystal=CrystalConfig(diameter_mm=6.0, insertion_depth_mm=7.8)))


def test_detector_scene_has_single_detector():
    sc = build_scene(SceneConfig(tip_style="flat", crystal=None, detector=DetectorConfig()))
    assert len(sc.solids_tagged("detector")) == 1
    assert contains((0, 0, 131.0), sc) == "detector"
