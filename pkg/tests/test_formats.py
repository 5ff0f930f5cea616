import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pumpmap.emfield import FieldMap, te011_analytic
from pumpmap.errors import FileFormatError, NonAxisymmetricError
from pumpmap.fom import overlap_delta
from pumpmap.formats import (export_field_map, fmp_bytes, grid_projection, import_field_map, inspect_file,
                             read_projection_csv, read_vgd, vgd_bytes, write_projection_csv, write_vgd)
from pumpmap.tracer import VoxelGrid


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(0, 1e3)),
       st.floats(-10, 10), st.floats(1e-3, 2.0))
def test_vgd_round_trip_bit_exact(values, ox, pitch):
    mask = (np.arange(values.size).reshape(values.shape) % 5).astype(np.uint8)
    g = VoxelGrid((ox, -ox, 0.5), pitch, values, mask)
    data = vgd_bytes(g)
    assert len(data) == 4 + 12 + 32 + values.size * 9
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "g.vgd")
        write_vgd(g, p)
        h = read_vgd(p)
    assert h.values.tobytes() == g.values.tobytes()
    assert np.array_equal(h.region_mask, g.region_mask)
    assert vgd_bytes(h) == data


def test_vgd_layout_is_x_fastest(tmp_path):
    values = np.arange(24, dtype=float).reshape(2, 3, 4)
    g = VoxelGrid((0, 0, 0), 1.0, values, np.zeros((2, 3, 4)))
    raw = vgd_bytes(g)
    head = 4 + 12 + 32
    vals = np.frombuffer(raw, "<f8", 24, head + 24)
    assert vals[0] == values[0, 0, 0] and vals[1] == values[1, 0, 0] and vals[2] == values[0, 1, 0]
    assert raw[:4] == b"VGD1"


def test_vgd_malformed(tmp_path):
    p = tmp_path / "x.vgd"
    p.write_bytes(b"VGD2" + bytes(44))
    with pytest.raises(FileFormatError):
        read_vgd(p)
    g = VoxelGrid((0, 0, 0), 1.0, np.ones((2, 2, 2)), np.zeros((2, 2, 2)))
    p.write_bytes(vgd_bytes(g)[:-3])
    with pytest.raises(FileFormatError):
        read_vgd(p)


def _te011_map(nr=161, nz=121, a=40.0, L=30.0):
    r = np.linspace(0, a, nr)
    z = np.linspace(0, L, nz)
    br, bz = te011_analytic(a, L, r, z)
    return FieldMap(0.0, 0.0, r[1], z[1], br, bz, 6.772)


def test_fmp_round_trip_bit_exact(tmp_path):
    f = _te011_map().normalized()
    export_field_map(f, tmp_path / "f.fmp")
    g = import_field_map(tmp_path / "f.fmp")
    assert not g.renormalized
    assert g.B_r.tobytes() == f.B_r.tobytes() and g.B_z.tobytes() == f.B_z.tobytes()
    assert fmp_bytes(g) == fmp_bytes(f)
    h = inspect_file(tmp_path / "f.fmp")
    assert h["format"] == "FMP1" and h["nr"] == 161 and h["freq_ghz"] == 6.772


def test_fmp_two_joule_file_is_halved(tmp_path):
    f = _te011_map().normalized()
    two = FieldMap(f.r0, f.z0, f.dr, f.dz, f.B_r * math.sqrt(2), f.B_z * math.sqrt(2), f.freq_ghz)
    assert two.energy_J() == pytest.approx(2.0, rel=1e-12)
    export_field_map(two, tmp_path / "two.fmp")
    g = import_field_map(tmp_path / "two.fmp")
    assert g.renormalized
    assert np.allclose(g.b2, two.b2 / 2.0, rtol=1e-12)


def test_fmp_non_axisymmetric_rejected(tmp_path):
    f = _te011_map()
    br = f.B_r.copy()
    br[:, 0] = 0.5 * np.abs(br).max()
    bad = FieldMap(0.0, 0.0, f.dr, f.dz, br, f.B_z, f.freq_ghz)
    export_field_map(bad, tmp_path / "bad.fmp")
    with pytest.raises(NonAxisymmetricError):
        import_field_map(tmp_path / "bad.fmp")
    neg = FieldMap(-1.0, 0.0, f.dr, f.dz, f.B_r, f.B_z, f.freq_ghz)
    export_field_map(neg, tmp_path / "neg.fmp")
    with pytest.raises(NonAxisymmetricError):
        import_field_map(tmp_path / "neg.fmp")


def test_fmp_malformed(tmp_path):
    (tmp_path / "x.fmp").write_bytes(b"FMP1\x01\x00")
    with pytest.raises(FileFormatError):
        import_field_map(tmp_path / "x.fmp")
    (tmp_path / "y.bin").write_bytes(b"ABCD" + bytes(60))
    with pytest.raises(FileFormatError):
        inspect_file(tmp_path / "y.bin")


def _closed_form_box_mean(a, L, lo, hi, n=48):
    """Mean of normalised |B|^2 over a box, Gauss-Legendre in x, y, z on the analytic mode."""
    from scipy.special import j0, j1
    x1 = 3.831705970207512
    kc, kz = x1 / a, math.pi / L
    # normalisation: int |B|^2 dV over the cavity, closed form
    # int_0^a [kz^2 J1^2 + kc^2 J0^2] r dr with J0(kc a) and J1'(...) identities
    from scipy.integrate import quad
    rad = quad(lambda r: (kz ** 2 * j1(kc * r) ** 2 * 0.5 + kc ** 2 * j0(kc * r) ** 2 * 0.5) * r, 0, a,
               epsabs=0, epsrel=1e-13, limit=200)[0]
    total = 2 * math.pi * rad * L  # the z-averages of cos^2 and sin^2 are 1/2, folded in above
    from pumpmap.emfield import MU0
    scale = 2 * MU0 / (total * 1e-9)
    gx, gw = np.polynomial.legendre.leggauss(n)
    pts = [0.5 * (h - l) * gx + 0.5 * (h + l) for l, h in zip(lo, hi)]
    wts = [0.5 * (h - l) * gw for l, h in zip(lo, hi)]
    X, Y, Z = np.meshgrid(*pts, indexing="ij")
    W = wts[0][:, None, None] * wts[1][None, :, None] * wts[2][None, None, :]
    R = np.hypot(X, Y)
    b2 = (kz * j1(kc * R) * np.cos(kz * Z)) ** 2 + (kc * j0(kc * R) * np.sin(kz * Z)) ** 2
    vol = np.prod(np.subtract(hi, lo))
    return scale * float(np.sum(W * b2)) / vol


def test_imported_analytic_mode_gives_closed_form_delta(tmp_path):
    f = _te011_map(nr=321, nz=241)
    export_field_map(f, tmp_path / "te011.fmp")
    g = import_field_map(tmp_path / "te011.fmp")
    assert g.renormalized
    pitch = 0.2
    lo = np.array([2.0, -3.0, 9.0])
    dims = (40, 30, 50)
    hi = lo + pitch * np.array(dims)
    vals = np.full(dims, 1.0 / (np.prod(dims) * pitch ** 3))
    grid = VoxelGrid(lo, pitch, vals, np.full(dims, 2, np.uint8))
    delta = overlap_delta(grid, g, "crystal")
    assert delta == pytest.approx(_closed_form_box_mean(40.0, 30.0, lo, hi), rel=1e-3)


def test_projection_csv_round_trip(tmp_path):
    values = np.random.default_rng(0).random((4, 5, 6))
    g = VoxelGrid((0.0, 1.0, 2.0), 0.25, values, np.full((4, 5, 6), 2))
    image, u, v = grid_projection(g, 2)
    write_projection_csv(tmp_path / "p.csv", image, u, v, 2, "rho", "W/mm^3")
    head, uu, vv, vals = read_projection_csv(tmp_path / "p.csv")
    assert "summed_axis=z" in head
    assert np.array_equal(vals, image.ravel())
    assert np.array_equal(np.unique(uu), u) and np.array_equal(np.unique(vv), v)
    assert vals.sum() * 0.25 ** 3 == pytest.approx(g.integral(), rel=1e-12)
