"""Binary grid/field files and CSV projections.

VGD1: b"VGD1", u32 nx ny nz, f64 origin[3], f64 pitch, u8 tag[n], f64 value[n]
FMP1: b"FMP1", u32 nr nz, f64 r0 z0 dr dz, f64 freq_ghz, f64 B_r[n], f64 B_z[n]

All little-endian.  Voxel arrays are x-fastest, z-slowest; field arrays are
r-fastest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .emfield import FieldMap
from .errors import FileFormatError, NonAxisymmetricError
from .tracer import VoxelGrid

VGD_MAGIC = b"VGD1"
FMP_MAGIC = b"FMP1"
_VGD_HEAD = struct.Struct("<4s3I4d")
_FMP_HEAD = struct.Struct("<4s2I5d")
PROJECTION_SCHEMA = "pumpmap-projection/1"
AXIS_NAMES = "xyz"
RENORMALIZE_TOL = 1e-6
AXIS_BR_TOL = 1e-6


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc


def _write(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise FileFormatError(f"cannot write {path}: {exc}") from exc


def vgd_bytes(grid: VoxelGrid) -> bytes:
    nx, ny, nz = grid.dims
    head = _VGD_HEAD.pack(VGD_MAGIC, nx, ny, nz, *map(float, grid.origin), float(grid.pitch))
    tags = np.ascontiguousarray(grid.region_mask.transpose(2, 1, 0), dtype="<u1").tobytes()
    vals = np.ascontiguousarray(grid.values.transpose(2, 1, 0), dtype="<f8").tobytes()
    return head + tags + vals


def write_vgd(grid: VoxelGrid, path):
    _write(path, vgd_bytes(grid))


def read_vgd_header(data: bytes) -> dict:
    if len(data) < _VGD_HEAD.size:
        raise FileFormatError("VGD1 file is truncated")
    magic, nx, ny, nz, ox, oy, oz, pitch = _VGD_HEAD.unpack_from(data)
    if magic != VGD_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {VGD_MAGIC!r}")
    return {"format": "VGD1", "nx": nx, "ny": ny, "nz": nz, "origin_mm": (ox, oy, oz), "pitch_mm": pitch}


def read_vgd(path) -> VoxelGrid:
    data = _read(path)
    h = read_vgd_header(data)
    nx, ny, nz = h["nx"], h["ny"], h["nz"]
    n = nx * ny * nz
    if n == 0 or not h["pitch_mm"] > 0:
        raise FileFormatError("VGD1 grid must have positive dimensions and pitch")
    expected = _VGD_HEAD.size + n + 8 * n
    if len(data) != expected:
        raise FileFormatError(f"VGD1 size {len(data)} bytes, expected {expected}")
    off = _VGD_HEAD.size
    tags = np.frombuffer(data, "<u1", n, off).reshape(nz, ny, nx).transpose(2, 1, 0)
    vals = np.frombuffer(data, "<f8", n, off + n).reshape(nz, ny, nx).transpose(2, 1, 0)
    return VoxelGrid(np.array(h["origin_mm"]), h["pitch_mm"], vals.astype(float), tags.astype(np.uint8))


def fmp_bytes(fmap: FieldMap) -> bytes:
    head = _FMP_HEAD.pack(FMP_MAGIC, fmap.nr, fmap.nz, float(fmap.r0), float(fmap.z0), float(fmap.dr),
                          float(fmap.dz), float(fmap.freq_ghz))
    return (head + np.ascontiguousarray(fmap.B_r, "<f8").tobytes()
            + np.ascontiguousarray(fmap.B_z, "<f8").tobytes())


def export_field_map(fmap: FieldMap, path):
    _write(path, fmp_bytes(fmap))


def read_fmp_header(data: bytes) -> dict:
    if len(data) < _FMP_HEAD.size:
        raise FileFormatError("FMP1 file is truncated")
    magic, nr, nz, r0, z0, dr, dz, freq = _FMP_HEAD.unpack_from(data)
    if magic != FMP_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {FMP_MAGIC!r}")
    return {"format": "FMP1", "nr": nr, "nz": nz, "r0_mm": r0, "z0_mm": z0, "dr_mm": dr, "dz_mm": dz,
            "freq_ghz": freq}


def import_field_map(path, renormalize: bool = True) -> FieldMap:
    """Read an FMP1 file; data not storing 1 J is rescaled and flagged ``renormalized``."""
    data = _read(path)
    h = read_fmp_header(data)
    nr, nz = h["nr"], h["nz"]
    n = nr * nz
    expected = _FMP_HEAD.size + 16 * n
    if nr < 2 or nz < 2 or len(data) != expected:
        raise FileFormatError(f"FMP1 size {len(data)} bytes for {nr}x{nz} nodes, expected {expected}")
    if not (h["dr_mm"] > 0 and h["dz_mm"] > 0):
        raise FileFormatError("FMP1 spacings must be positive")
    if h["r0_mm"] < 0:
        raise NonAxisymmetricError("FMP1 radial axis starts at negative r; data is not a meridional half-plane")
    off = _FMP_HEAD.size
    br = np.frombuffer(data, "<f8", n, off).reshape(nz, nr).astype(float)
    bz = np.frombuffer(data, "<f8", n, off + 8 * n).reshape(nz, nr).astype(float)
    if not (np.all(np.isfinite(br)) and np.all(np.isfinite(bz))):
        raise FileFormatError("FMP1 contains non-finite field values")
    scale = max(np.abs(br).max(), np.abs(bz).max())
    if h["r0_mm"] == 0 and scale > 0 and np.abs(br[:, 0]).max() > AXIS_BR_TOL * scale:
        raise NonAxisymmetricError("radial field does not vanish on the axis")
    fmap = FieldMap(h["r0_mm"], h["z0_mm"], h["dr_mm"], h["dz_mm"], br, bz, h["freq_ghz"])
    if renormalize and abs(fmap.energy_J() - 1.0) > RENORMALIZE_TOL:
        fmap = fmap.normalized()
        object.__setattr__(fmap, "renormalized", True)
    return fmap


def inspect_file(path) -> dict:
    """Header fields of a VGD1 or FMP1 file."""
    data = _read(path)
    magic = data[:4]
    if magic == VGD_MAGIC:
        h = read_vgd_header(data)
    elif magic == FMP_MAGIC:
        h = read_fmp_header(data)
    else:
        raise FileFormatError(f"{path}: unknown magic {magic!r}")
    h["bytes"] = len(data)
    return h


def _fmt(v) -> str:
    return repr(float(v))


def write_projection_csv(path, image: np.ndarray, u: np.ndarray, v: np.ndarray, axis: int,
                         quantity: str, units: str):
    """Write a 2-D projection as long-form CSV: u_mm, v_mm, value (full precision)."""
    names = [a for i, a in enumerate(AXIS_NAMES) if i != axis]
    lines = [f"# {PROJECTION_SCHEMA} summed_axis={AXIS_NAMES[axis]} quantity={quantity} units={units}",
             f"{names[0]}_mm,{names[1]}_mm,value"]
    for i, uu in enumerate(u):
        for j, vv in enumerate(v):
            lines.append(f"{_fmt(uu)},{_fmt(vv)},{_fmt(image[i, j])}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise FileFormatError(f"cannot write {path}: {exc}") from exc


def read_projection_csv(path):
    """Returns (header comment, u, v, values) as flat arrays."""
    try:
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().strip()
            fh.readline()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"cannot read projection {path}: {exc}") from exc
    if not head.startswith(f"# {PROJECTION_SCHEMA}"):
        raise FileFormatError(f"{path}: missing projection schema line")
    return head, data[:, 0], data[:, 1], data[:, 2]


def grid_projection(grid: VoxelGrid, axis: int, region=None, values=None):
    """Sum of (optionally masked) voxel values along ``axis``; returns (image, u centres, v centres)."""
    vals = grid.values if values is None else values
    if region is not None:
        vals = np.where(grid.region(region), vals, 0.0)
    image = vals.sum(axis=axis)
    others = [i for i in range(3) if i != axis]
    return image, grid.centers(others[0]), grid.centers(others[1])
