"""Axisymmetric TE0 cavity modes and the energy-normalised |B|^2 map.

The azimuthal field E_phi(r, z) of an azimuthally invariant TE mode obeys

    d/dr(r dE/dr) - E/r + r d2E/dz2 + k0^2 eps(r, z) r E = 0

inside a PEC cylinder (E = 0 on every wall and on the axis).  A conservative
five-point finite-difference stencil turns this into the symmetric generalized
problem A u = k0^2 M u with a diagonal mass matrix.

Coordinates are in mm: r from the axis, z from the cavity floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from .errors import (InvalidConfigError, MeshTooCoarseError, NoModeFoundError,
                     NumericError, OutOfDomainError)

C_MM_PER_S = 299_792_458.0e3
MU0 = 1.25663706212e-6  # T m / A
MM3 = 1e-9  # m^3 per mm^3
MIN_WALL_CELLS = 8
RING_FRACTION_MIN = 0.5
SEARCH_WINDOW = 0.30
RESIDUAL_MAX = 1e-8


@dataclass(frozen=True)
class CavitySpec:
    """PEC cylinder holding a dielectric ring that rests on a washer.

    The cavity spans r <= cavity_radius_mm, 0 <= z <= ceiling_mm.  The washer
    fills ring-radius annulus from the floor up to ring_offset_mm; the ring
    sits on top of it.  A ring with outer radius 0 means an empty cavity.
    """

    cavity_radius_mm: float = 18.0
    ceiling_mm: float = 18.0
    ring_inner_radius_mm: float = 4.5
    ring_outer_radius_mm: float = 7.1
    ring_height_mm: float = 8.0
    ring_offset_mm: float = 4.0
    ring_eps: float = 318.0
    support_eps: float = 2.1
    support_inner_radius_mm: Optional[float] = None  # defaults to the ring bore
    support_outer_radius_mm: Optional[float] = None  # defaults to the ring outer radius

    def __post_init__(self):
        if not (self.cavity_radius_mm > 0 and self.ceiling_mm > 0):
            raise InvalidConfigError("cavity radius and ceiling must be positive")
        if self.ring_eps < 1 or self.support_eps < 1:
            raise InvalidConfigError("relative permittivities must be >= 1")
        if self.has_ring:
            if not 0 < self.ring_inner_radius_mm < self.ring_outer_radius_mm:
                raise InvalidConfigError("ring needs 0 < inner radius < outer radius (non-empty bore)")
            if self.ring_outer_radius_mm >= self.cavity_radius_mm:
                raise InvalidConfigError("ring must fit inside the cavity radius")
            if not (self.ring_height_mm > 0 and self.ring_offset_mm >= 0):
                raise InvalidConfigError("ring height must be positive and offset non-negative")
            if self.ring_offset_mm + self.ring_height_mm >= self.ceiling_mm:
                raise InvalidConfigError("ring must sit below the ceiling")
            si, so = self.support_radii
            if not 0 <= si < so <= self.cavity_radius_mm:
                raise InvalidConfigError("support radii must be nested inside the cavity")

    @classmethod
    def empty(cls, radius_mm, height_mm):
        return cls(cavity_radius_mm=radius_mm, ceiling_mm=height_mm, ring_outer_radius_mm=0.0,
                   ring_inner_radius_mm=0.0, ring_height_mm=0.0, ring_offset_mm=0.0,
                   ring_eps=1.0, support_eps=1.0)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(f"bad cavity config: {exc}") from None

    @property
    def has_ring(self) -> bool:
        return self.ring_outer_radius_mm > 0

    @property
    def support_radii(self):
        si = self.ring_inner_radius_mm if self.support_inner_radius_mm is None else self.support_inner_radius_mm
        so = self.ring_outer_radius_mm if self.support_outer_radius_mm is None else self.support_outer_radius_mm
        return si, so

    @property
    def ring_mid_z(self) -> float:
        return self.ring_offset_mm + 0.5 * self.ring_height_mm

    def dielectric_blocks(self):
        """(r0, r1, z0, z1, eps) rectangles in the meridional plane."""
        if not self.has_ring:
            return []
        si, so = self.support_radii
        blocks = [(self.ring_inner_radius_mm, self.ring_outer_radius_mm, self.ring_offset_mm,
                   self.ring_offset_mm + self.ring_height_mm, self.ring_eps)]
        if self.ring_offset_mm > 0 and self.support_eps > 1:
            blocks.append((si, so, 0.0, self.ring_offset_mm, self.support_eps))
        return blocks


@dataclass(frozen=True)
class FieldMap:
    """B_r, B_z on an (nz, nr) node grid; values in T for 1 J of stored magnetic energy."""

    r0: float
    z0: float
    dr: float
    dz: float
    B_r: np.ndarray
    B_z: np.ndarray
    freq_ghz: float
    ring_fraction: float = float("nan")
    residual: float = float("nan")
    renormalized: bool = False

    def __post_init__(self):
        br = np.asarray(self.B_r, float)
        bz = np.asarray(self.B_z, float)
        if br.ndim != 2 or br.shape != bz.shape or min(br.shape) < 2:
            raise InvalidConfigError("field components must be matching (nz, nr) arrays with >= 2 nodes per axis")
        if not (self.dr > 0 and self.dz > 0):
            raise InvalidConfigError("field grid spacings must be positive")
        object.__setattr__(self, "B_r", br)
        object.__setattr__(self, "B_z", bz)

    @property
    def shape(self):
        return self.B_r.shape

    @property
    def nr(self) -> int:
        return self.B_r.shape[1]

    @property
    def nz(self) -> int:
        return self.B_r.shape[0]

    @property
    def r(self) -> np.ndarray:
        return self.r0 + self.dr * np.arange(self.nr)

    @property
    def z(self) -> np.ndarray:
        return self.z0 + self.dz * np.arange(self.nz)

    @property
    def b2(self) -> np.ndarray:
        return self.B_r * self.B_r + self.B_z * self.B_z

    def energy_J(self) -> float:
        return magnetic_energy(self.b2, self.r, self.dr, self.dz)

    def normalized(self) -> "FieldMap":
        """Rescale so the stored magnetic energy is exactly 1 J."""
        w = self.energy_J()
        if not w > 0:
            raise NumericError("field map carries no magnetic energy")
        s = 1.0 / math.sqrt(w)
        return replace(self, B_r=self.B_r * s, B_z=self.B_z * s)

    def translated(self, dz_mm: float) -> "FieldMap":
        return replace(self, z0=self.z0 + dz_mm)


def magnetic_energy(b2, r, dr, dz) -> float:
    """Trapezoidal integral of |B|^2 / (2 mu0) over the body of revolution, in J."""
    wr = np.full(len(r), dr)
    wr[[0, -1]] *= 0.5
    wz = np.full(b2.shape[0], dz)
    wz[[0, -1]] *= 0.5
    integral = float(wz @ b2 @ (wr * 2.0 * math.pi * np.abs(r)))
    return integral * MM3 / (2.0 * MU0)


def _overlap(a0, a1, b0, b1):
    return max(0.0, min(a1, b1) - max(a0, b0))


def node_permittivity(spec: CavitySpec, r: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Relative permittivity at each (z, r) node: r-weighted average over its dual cell."""
    dr = r[1] - r[0]
    dz = z[1] - z[0]
    rlo = np.maximum(r - 0.5 * dr, 0.0)
    rhi = np.minimum(r + 0.5 * dr, r[-1])
    zlo = np.maximum(z - 0.5 * dz, z[0])
    zhi = np.minimum(z + 0.5 * dz, z[-1])
    cell_r = 0.5 * (rhi ** 2 - rlo ** 2)
    cell_z = zhi - zlo
    eps = np.ones((len(z), len(r)))
    for b_r0, b_r1, b_z0, b_z1, e in spec.dielectric_blocks():
        lo = np.clip(rlo, b_r0, b_r1)
        hi = np.clip(rhi, b_r0, b_r1)
        fr = np.where(cell_r > 0, 0.5 * (hi ** 2 - lo ** 2) / np.where(cell_r > 0, cell_r, 1.0), 0.0)
        fz = np.array([_overlap(a, b, b_z0, b_z1) for a, b in zip(zlo, zhi)]) / cell_z
        eps += (e - 1.0) * np.outer(fz, fr)
    return eps


def _mesh(spec: CavitySpec, pitch: float, z_cells: Optional[int]):
    nr_cells = max(2, int(round(spec.cavity_radius_mm / pitch)))
    nz_cells = z_cells if z_cells is not None else max(2, int(round(spec.ceiling_mm / pitch)))
    r = np.linspace(0.0, spec.cavity_radius_mm, nr_cells + 1)
    z = np.linspace(0.0, spec.ceiling_mm, nz_cells + 1)
    return r, z


def assemble(spec: CavitySpec, r: np.ndarray, z: np.ndarray):
    """Stiffness A, diagonal mass M (as a vector) and the node permittivity."""
    dr = r[1] - r[0]
    dz = z[1] - z[0]
    eps = node_permittivity(spec, r, z)
    ri = r[1:-1]
    nri = len(ri)
    nzi = len(z) - 2
    rp = ri + 0.5 * dr
    rm = ri - 0.5 * dr
    diag_r = (rp + rm) * dz / dr + dr * dz / ri + 2.0 * ri * dr / dz
    off_r = -rp[:-1] * dz / dr
    off_z = -ri * dr / dz
    tr = sp.diags([off_r, diag_r, off_r], [-1, 0, 1], format="csr")
    A = sp.kron(sp.identity(nzi), tr, format="csr")
    A = A + sp.kron(sp.diags([np.ones(nzi - 1), np.ones(nzi - 1)], [-1, 1]), sp.diags(off_z), format="csr")
    m = (eps[1:-1, 1:-1] * (ri * dr * dz)[None, :]).ravel()
    return A.tocsc(), m, eps


def _fields_from_e(E, r, dr, dz):
    """B_r = -dE/dz and B_z = (1/r) d(rE)/dr on all nodes (common factor 1/omega dropped)."""
    nz, nr = E.shape
    dEdz = np.empty_like(E)
    dEdz[1:-1] = (E[2:] - E[:-2]) / (2 * dz)
    dEdz[0] = (-3 * E[0] + 4 * E[1] - E[2]) / (2 * dz)
    dEdz[-1] = (3 * E[-1] - 4 * E[-2] + E[-3]) / (2 * dz)
    dEdr = np.empty_like(E)
    dEdr[:, 1:-1] = (E[:, 2:] - E[:, :-2]) / (2 * dr)
    dEdr[:, -1] = (3 * E[:, -1] - 4 * E[:, -2] + E[:, -3]) / (2 * dr)
    bz = np.empty_like(E)
    bz[:, 1:] = dEdr[:, 1:] + E[:, 1:] / r[None, 1:]
    # E ~ c1 r + c3 r^3 near the axis, so B_z(0) = 2 c1
    bz[:, 0] = 2.0 * (8.0 * E[:, 1] - E[:, 2]) / (6.0 * dr)
    br = -dEdz
    br[:, 0] = 0.0
    return br, bz


def _ring_fraction(spec, u2, m, eps):
    """Electric-energy fraction stored in ring nodes (u2 = nodal E^2, m carries eps)."""
    if not spec.has_ring:
        return float("nan")
    w = u2 * m
    ring = (eps[1:-1, 1:-1] >= 0.5 * (spec.ring_eps + 1.0)).ravel()
    return float(w[ring].sum() / w.sum())


def solve_te0_mode(spec: CavitySpec, mesh_pitch: float = 0.25, target_freq: float = 1.4496,
                   *, z_cells: Optional[int] = None, n_candidates: int = 6) -> FieldMap:
    """Eigenpair nearest ``target_freq`` (GHz) whose ring energy fraction exceeds 0.5.

    For a cavity without a ring the nearest eigenpair is taken.
    """
    if not target_freq > 0:
        raise InvalidConfigError("target frequency must be positive")
    if not mesh_pitch > 0:
        raise InvalidConfigError("mesh pitch must be positive")
    r, z = _mesh(spec, mesh_pitch, z_cells)
    dr = r[1] - r[0]
    dz = z[1] - z[0]
    if spec.has_ring:
        wall = spec.ring_outer_radius_mm - spec.ring_inner_radius_mm
        if wall / dr < MIN_WALL_CELLS or spec.ring_height_mm / dz < MIN_WALL_CELLS:
            raise MeshTooCoarseError(
                f"mesh pitch {mesh_pitch} mm gives fewer than {MIN_WALL_CELLS} cells across the ring")
    if len(r) < 4 or len(z) < 4:
        raise MeshTooCoarseError("mesh needs at least three interior nodes per axis")
    A, m, eps = assemble(spec, r, z)
    M = sp.diags(m, format="csc")
    k_target = 2 * math.pi * target_freq * 1e9 / C_MM_PER_S
    sigma = k_target ** 2
    k = min(n_candidates, A.shape[0] - 2)
    try:
        # fixed start vector: ARPACK otherwise draws a random one and the map is not reproducible
        v0 = np.linspace(1.0, 2.0, A.shape[0])
        lam, vec = eigsh(A, k=k, M=M, sigma=sigma, which="LM", tol=0.0, v0=v0)
    except Exception as exc:  # ARPACK failures surface as numeric errors
        raise NoModeFoundError(f"eigen solver failed: {exc}") from exc
    nri = len(r) - 2
    freqs = np.sqrt(np.maximum(lam, 0.0)) * C_MM_PER_S / (2 * math.pi) / 1e9
    order = np.argsort(np.abs(freqs - target_freq))
    chosen = None
    for idx in order:
        if abs(freqs[idx] - target_freq) > SEARCH_WINDOW * target_freq:
            break
        frac = _ring_fraction(spec, vec[:, idx] ** 2, m, eps)
        if spec.has_ring and not frac > RING_FRACTION_MIN:
            continue
        chosen = idx
        break
    if chosen is None:
        raise NoModeFoundError(
            f"no TE0 mode with ring energy fraction > {RING_FRACTION_MIN} within "
            f"{SEARCH_WINDOW:.0%} of {target_freq} GHz (candidates {np.round(freqs, 4).tolist()})")
    u, lam_c = _refine(A, m, vec[:, chosen], lam[chosen])
    # sign convention: largest |E_phi| component positive
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    resid = eigen_residual(A, m, u, lam_c)
    if resid > RESIDUAL_MAX:
        raise NumericError(f"eigen residual {resid:.2e} exceeds {RESIDUAL_MAX:.0e}")
    E = np.zeros((len(z), len(r)))
    E[1:-1, 1:-1] = u.reshape(len(z) - 2, nri)
    br, bz = _fields_from_e(E, r, dr, dz)
    freq = math.sqrt(lam_c) * C_MM_PER_S / (2 * math.pi) / 1e9
    fmap = FieldMap(r0=0.0, z0=0.0, dr=dr, dz=dz, B_r=br, B_z=bz, freq_ghz=freq,
                    ring_fraction=_ring_fraction(spec, u ** 2, m, eps), residual=resid)
    return fmap.normalized()


def eigen_residual(A, m, u, lam) -> float:
    mu = m * u
    return float(np.linalg.norm(A @ u - lam * mu) / np.linalg.norm(lam * mu))


def _refine(A, m, u, lam, steps=3):
    """Rayleigh-quotient polish with a couple of shifted inverse iterations."""
    u = u / math.sqrt(u @ (m * u))
    if eigen_residual(A, m, u, lam) <= 1e-12:
        return u, lam
    lu = splu((A - lam * (1 - 1e-10) * sp.diags(m)).tocsc())
    for _ in range(steps):
        u = lu.solve(m * u)
        u = u / math.sqrt(u @ (m * u))
        lam = float(u @ (A @ u))
    return u, lam


def tune_ceiling(spec: CavitySpec, target_freq: float = 1.4496, mesh_pitch: float = 0.25,
                 bracket=None, tol_ghz: float = 1e-4, max_iter: int = 60):
    """Bisect the ceiling height until the mode sits within tol_ghz of target_freq.

    The number of z cells is frozen at the starting ceiling so the mesh
    deforms continuously while the ceiling moves.  Frequency must decrease as
    the ceiling rises; that is checked on the bracket and on every step.
    Returns (tuned spec, FieldMap).
    """
    top_of_ring = spec.ring_offset_mm + spec.ring_height_mm if spec.has_ring else 0.0
    lo, hi = bracket if bracket is not None else (top_of_ring + 2.0, spec.ceiling_mm + 4.0)
    if not lo < hi:
        raise InvalidConfigError("ceiling bracket must be increasing")
    n_z = max(2, int(round(spec.ceiling_mm / mesh_pitch)))

    cache = {}

    def solve(c):
        if c not in cache:
            cache[c] = solve_te0_mode(replace(spec, ceiling_mm=c), mesh_pitch, target_freq, z_cells=n_z)
        return cache[c]

    def f(c):
        return solve(c).freq_ghz

    f_lo = f(lo)
    f_hi = f(hi)
    if not f_lo > f_hi:
        raise NumericError("mode frequency does not fall as the ceiling rises over the bracket")
    if not f_hi <= target_freq <= f_lo:
        raise NoModeFoundError(
            f"target {target_freq} GHz outside the bracket range [{f_hi:.6f}, {f_lo:.6f}] GHz")
    best = lo if abs(f_lo - target_freq) < abs(f_hi - target_freq) else hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if not f_hi - 1e-12 <= fm <= f_lo + 1e-12:
            raise NumericError("mode frequency is not monotone in the ceiling height")
        if abs(fm - target_freq) < abs(f(best) - target_freq):
            best = mid
        if abs(fm - target_freq) <= tol_ghz:
            break
        if fm > target_freq:
            lo, f_lo = mid, fm
        else:
            hi, f_hi = mid, fm
    tuned = replace(spec, ceiling_mm=best)
    return tuned, solve(best)


def sample_b2(fmap: FieldMap, points) -> np.ndarray:
    """Bilinear |B|^2 at Cartesian points (mm) using r = hypot(x, y); exact at nodes."""
    pts = np.asarray(points, float).reshape(-1, 3)
    rr = np.hypot(pts[:, 0], pts[:, 1])
    gi = (rr - fmap.r0) / fmap.dr
    gj = (pts[:, 2] - fmap.z0) / fmap.dz
    eps = 1e-9
    if np.any(gi < -eps) or np.any(gi > fmap.nr - 1 + eps) or np.any(gj < -eps) or np.any(gj > fmap.nz - 1 + eps):
        raise OutOfDomainError("query point lies outside the field map")
    gi = np.clip(gi, 0.0, fmap.nr - 1)
    gj = np.clip(gj, 0.0, fmap.nz - 1)
    i = np.minimum(np.floor(gi).astype(np.int64), fmap.nr - 2)
    j = np.minimum(np.floor(gj).astype(np.int64), fmap.nz - 2)
    tx = gi - i
    tz = gj - j
    b2 = fmap.b2
    return ((1 - tz) * ((1 - tx) * b2[j, i] + tx * b2[j, i + 1])
            + tz * ((1 - tx) * b2[j + 1, i] + tx * b2[j + 1, i + 1]))


def sample_B2(fmap: FieldMap, point) -> float:
    """|B|^2 (T^2 per J) at one point."""
    return float(sample_b2(fmap, np.asarray(point, float)[None, :])[0])


def te011_analytic(radius_mm, height_mm, r, z):
    """Closed-form TE011 B_r, B_z shapes (unnormalised) of an empty PEC cylinder on a node grid."""
    from scipy.special import j0, j1
    x1 = 3.831705970207512
    kc = x1 / radius_mm
    kz = math.pi / height_mm
    R, Z = np.meshgrid(r, z)
    br = -kz * j1(kc * R) * np.cos(kz * Z)
    bz = kc * j0(kc * R) * np.sin(kz * Z)
    return br, bz


def te011_frequency(radius_mm, height_mm) -> float:
    x1 = 3.831705970207512
    return C_MM_PER_S / (2 * math.pi) * math.sqrt((x1 / radius_mm) ** 2 + (math.pi / height_mm) ** 2) / 1e9


def centered_on_ring(fmap: FieldMap, spec: CavitySpec) -> FieldMap:
    """Shift a cavity-frame map so z = 0 is the ring mid-plane (the exchange frame for FMP1 files)."""
    return fmap.translated(-spec.ring_mid_z if spec.has_ring else -0.5 * spec.ceiling_mm)
