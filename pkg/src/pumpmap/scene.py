"""Optical geometry: convex CSG solids with precedence, ray intersection, point location.

Solids are listed in precedence order; where two solids overlap the later one
wins.  An invasive crystal is therefore a plain cylinder listed *before* the
waveguide, which carves its tip out of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import DegenerateRayError, InvalidConfigError

REGION_TAGS = ("air", "waveguide", "crystal", "coupling", "detector")
REGION_CODES = {tag: i for i, tag in enumerate(("air", "waveguide", "crystal", "coupling", "detector"))}
TIP_STYLES = ("flat", "wedge", "spear")
SOLID_KINDS = ("finite-cylinder", "box", "cylinder-clipped-by-half-spaces")


@dataclass(frozen=True)
class Material:
    name: str
    refractive_index: float
    absorption_coefficient: float = 0.0  # mm^-1; math.inf marks a perfect absorber

    def __post_init__(self):
        if not self.refractive_index >= 1.0:
            raise InvalidConfigError(f"material {self.name!r}: refractive index must be >= 1")
        if not self.absorption_coefficient >= 0.0:
            raise InvalidConfigError(f"material {self.name!r}: absorption coefficient must be >= 0")


AIR = Material("air", 1.0, 0.0)


@dataclass(frozen=True)
class Solid:
    """Convex solid: optional cylinder (base point, axis, radius, length) and/or half-spaces.

    ``planes`` holds (unit normal, offset) pairs meaning ``normal . x <= offset``.
    A box carries its six face planes and no cylinder.
    """

    kind: str
    material: Material
    region_tag: str
    radius: float = 0.0
    base: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    length: float = 0.0
    planes: tuple = ()
    box_lo: tuple = ()
    box_hi: tuple = ()

    @classmethod
    def finite_cylinder(cls, radius, z0, z1, material, region_tag, center=(0.0, 0.0),
                        axis=(0.0, 0.0, 1.0), extra_planes=()):
        axis = np.asarray(axis, float)
        if np.linalg.norm(axis) == 0:
            raise InvalidConfigError("cylinder axis must be non-zero")
        axis = axis / np.linalg.norm(axis)
        if radius <= 0 or z1 <= z0:
            raise InvalidConfigError("cylinder needs positive radius and length")
        base = np.array([center[0], center[1], 0.0]) + z0 * axis
        kind = "cylinder-clipped-by-half-spaces" if extra_planes else "finite-cylinder"
        return cls(kind=kind, material=material, region_tag=region_tag, radius=float(radius),
                   base=tuple(base), axis=tuple(axis), length=float(z1 - z0),
                   planes=tuple((tuple(np.asarray(n, float)), float(d)) for n, d in extra_planes))

    @classmethod
    def box(cls, lo, hi, material, region_tag):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if any(h <= l for l, h in zip(lo, hi)):
            raise InvalidConfigError("box needs positive extent on every axis")
        return cls(kind="box", material=material, region_tag=region_tag, box_lo=lo, box_hi=hi)

    @property
    def has_cylinder(self) -> bool:
        return self.kind != "box"

    def all_planes(self):
        """Every half-space of the solid, caps and box faces included."""
        out = []
        if self.kind == "box":
            for ax in range(3):
                n = [0.0, 0.0, 0.0]
                n[ax] = 1.0
                out.append((tuple(n), self.box_hi[ax]))
                n = [0.0, 0.0, 0.0]
                n[ax] = -1.0
                out.append((tuple(n), -self.box_lo[ax]))
            return out
        a = np.asarray(self.axis)
        b = np.asarray(self.base)
        out.append((tuple(a), float(a @ b + self.length)))
        out.append((tuple(-a), float(-(a @ b))))
        out.extend(self.planes)
        return out

    def aabb(self):
        if self.kind == "box":
            return np.array(self.box_lo), np.array(self.box_hi)
        a = np.asarray(self.axis)
        b = np.asarray(self.base)
        ends = np.stack([b, b + self.length * a])
        ext = self.radius * np.sqrt(np.clip(1.0 - a * a, 0.0, None))
        return ends.min(axis=0) - ext, ends.max(axis=0) + ext


@dataclass(frozen=True)
class Hit:
    distance: float
    point: np.ndarray
    normal: np.ndarray
    material_before: Material
    material_after: Material
    region_tag_after: str


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    weight: float = 1.0
    wavelength: float = 570.0


@dataclass(eq=False)
class Scene:
    solids: list
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    tip_style: str = "flat"
    tip_full_angle: float = 0.0
    tip_planes: list = field(default_factory=list)
    apex: Optional[np.ndarray] = None
    retro_center: tuple = (0.0, 0.0)
    retro_radius: float = 0.0
    led_z: float = 0.0
    config_hash: str = ""

    def __post_init__(self):
        self.bbox_lo = np.asarray(self.bbox_lo, float)
        self.bbox_hi = np.asarray(self.bbox_hi, float)
        self.validate()
        self._build_arrays()

    def validate(self):
        if np.any(self.bbox_hi <= self.bbox_lo):
            raise InvalidConfigError("bounding box must have positive extent")
        detectors = [s for s in self.solids if s.region_tag == "detector"]
        if len(detectors) > 1:
            raise InvalidConfigError("at most one detector solid is allowed")
        for s in self.solids:
            if s.region_tag not in REGION_TAGS or s.region_tag == "air":
                raise InvalidConfigError(f"bad region tag {s.region_tag!r}")
            lo, hi = s.aabb()
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise InvalidConfigError("unbounded solid")
            if np.any(lo < self.bbox_lo - 1e-9) or np.any(hi > self.bbox_hi + 1e-9):
                raise InvalidConfigError(f"{s.region_tag} solid extends beyond the bounding box")
        for d in detectors:
            dlo, dhi = d.aabb()
            for s in self.solids:
                if s is d:
                    continue
                slo, shi = s.aabb()
                overlap = np.minimum(dhi, shi) - np.maximum(dlo, slo)
                if np.all(overlap > 1e-9):
                    raise InvalidConfigError(f"detector overlaps the {s.region_tag} region")

    def _build_arrays(self):
        mats = [AIR]
        for s in self.solids:
            if s.material not in mats:
                mats.append(s.material)
        self.materials = mats
        n = len(self.solids)
        sol = np.zeros((n, K.SOL_COLS))
        pl = []
        for i, s in enumerate(self.solids):
            if s.has_cylinder:
                sol[i, K.HAS_CYL] = 1.0
                sol[i, K.CX:K.CX + 3] = s.base
                sol[i, K.AX:K.AX + 3] = s.axis
                sol[i, K.RAD] = s.radius
            planes = s.all_planes()
            sol[i, K.P_START] = len(pl)
            sol[i, K.P_COUNT] = len(planes)
            for nv, dv in planes:
                nv = np.asarray(nv, float)
                norm = np.linalg.norm(nv)
                pl.append([*(nv / norm), dv / norm])
            lo, hi = s.aabb()
            sol[i, K.BLO:K.BLO + 3] = lo
            sol[i, K.BHI:K.BHI + 3] = hi
            sol[i, K.MAT] = mats.index(s.material)
            sol[i, K.REGION] = REGION_CODES[s.region_tag]
        self.arrays = (sol, np.asarray(pl, float).reshape(-1, 4),
                       self.bbox_lo.copy(), self.bbox_hi.copy())
        self.solid_mat = sol[:, K.MAT].astype(np.int64)
        self.solid_region = sol[:, K.REGION].astype(np.int64)
        self.mat_n = np.array([m.refractive_index for m in mats])
        self.mat_alpha = np.array([m.absorption_coefficient for m in mats])

    def solids_tagged(self, tag):
        return [s for s in self.solids if s.region_tag == tag]

    def exit_distance(self, origin, direction):
        t, _ = K.bbox_exit(self.bbox_lo, self.bbox_hi, np.asarray(origin, float),
                           np.asarray(direction, float))
        return float(t)

    def region_aabb(self, tag):
        boxes = [s.aabb() for s in self.solids_tagged(tag)]
        if not boxes:
            return None
        return (np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0))


def contains(point, scene: Scene) -> str:
    """Region tag of the highest-precedence solid containing ``point`` ("air" if none)."""
    s = K.locate(scene.arrays[0], scene.arrays[1], np.asarray(point, float))
    return "air" if s < 0 else scene.solids[s].region_tag


def contains_many(points, scene: Scene) -> np.ndarray:
    """Vectorised :func:`contains`; returns region codes (see ``REGION_CODES``)."""
    pts = np.ascontiguousarray(np.asarray(points, float).reshape(-1, 3))
    idx = K.locate_many(scene.arrays[0], scene.arrays[1], pts)
    codes = np.zeros(len(idx), dtype=np.uint8)
    inside = idx >= 0
    codes[inside] = scene.solid_region[idx[inside]]
    return codes


def _unit(direction):
    d = np.asarray(direction, float)
    norm = np.linalg.norm(d)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateRayError("ray direction must be non-zero")
    return d / norm


def intersect(ray: Ray, scene: Scene, tmin: float = K.EDGE_TOL) -> Optional[Hit]:
    """Nearest surface crossing that changes material, or None if the ray leaves the box first."""
    d = _unit(ray.direction)
    o = np.asarray(ray.origin, float)
    t, sid, mb, ma = K.first_hits(*scene.arrays, o[None, :], d[None, :], tmin)
    if not np.isfinite(t[0]):
        return None
    p = o + t[0] * d
    nrm = np.array(K.surface_normal(scene.arrays[0], scene.arrays[1], int(sid[0]), p))
    if nrm @ d > 0:
        nrm = -nrm
    tag = contains(p + K.NUDGE * d, scene)
    return Hit(distance=float(t[0]), point=p, normal=nrm,
               material_before=scene.materials[mb[0]], material_after=scene.materials[ma[0]],
               region_tag_after=tag)


def intersect_many(origins, directions, scene: Scene, tmin: float = K.EDGE_TOL):
    """Batch version of :func:`intersect` returning raw arrays (t, surface id, mat before, mat after)."""
    o = np.ascontiguousarray(np.asarray(origins, float))
    d = np.asarray(directions, float)
    norms = np.linalg.norm(d, axis=1)
    if np.any(norms == 0):
        raise DegenerateRayError("ray direction must be non-zero")
    d = np.ascontiguousarray(d / norms[:, None])
    return K.first_hits(*scene.arrays, o, d, tmin)


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class RodConfig:
    diameter_mm: float = 5.0
    length_mm: float = 130.0
    material: str = "quartz"


@dataclass(frozen=True)
class CouplingConfig:
    thickness_mm: float = 0.05
    material: str = "coupling_fluid"


@dataclass(frozen=True)
class CrystalConfig:
    diameter_mm: float = 8.0
    length_mm: float = 8.0
    insertion_depth_mm: float = 0.0  # 0 = butt-coupled onto the rod end
    material: str = "ptc_ptp"


@dataclass(frozen=True)
class DetectorConfig:
    diameter_mm: float = 24.5
    thickness_mm: float = 1.0
    gap_mm: float = 0.5


@dataclass(frozen=True)
class SceneConfig:
    tip_style: str = "wedge"
    tip_full_angle_deg: float = 40.0
    rod: RodConfig = RodConfig()
    coupling: CouplingConfig = CouplingConfig()
    crystal: Optional[CrystalConfig] = CrystalConfig()
    detector: Optional[DetectorConfig] = None
    margin_mm: float = 2.0
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))

    @classmethod
    def from_dict(cls, d: dict, materials: Optional[dict] = None) -> "SceneConfig":
        d = dict(d)
        try:
            rod = RodConfig(**d.pop("rod", {}))
            coupling = CouplingConfig(**d.pop("coupling", {}))
            crystal = d.pop("crystal", {})
            crystal = None if crystal is None else CrystalConfig(**crystal)
            detector = d.pop("detector", None)
            detector = None if detector is None else DetectorConfig(**detector)
            mats = dict(DEFAULT_MATERIALS)
            for name, spec in (materials or {}).items():
                mats[name] = material_from_dict(name, spec)
            return cls(rod=rod, coupling=coupling, crystal=crystal, detector=detector,
                       materials=mats, **d)
        except TypeError as exc:
            raise InvalidConfigError(f"bad scene config: {exc}") from None


DEFAULT_MATERIALS = {
    "quartz": Material("quartz", 1.46, 0.0),
    "coupling_fluid": Material("coupling_fluid", 1.46, 0.0),
    "ptc_ptp": Material("ptc_ptp", 1.65, 2.0),
}


def material_from_dict(name, spec):
    try:
        return Material(name, float(spec["refractive_index"]),
                        float(spec.get("absorption_coefficient_per_mm", 0.0)))
    except KeyError as exc:
        raise InvalidConfigError(f"material {name!r} is missing {exc}") from None


def tip_length(radius, style, full_angle_deg):
    if style == "flat":
        return 0.0
    return radius / math.tan(math.radians(full_angle_deg) / 2.0)


def tip_facet_planes(apex, style, full_angle_deg, first_azimuth_deg=0.0):
    """Facet half-spaces (normal, offset) through ``apex`` for a z-axis rod."""
    if style == "flat":
        return []
    count = {"wedge": 2, "spear": 3}[style]
    h = math.radians(full_angle_deg) / 2.0
    apex = np.asarray(apex, float)
    planes = []
    for i in range(count):
        psi = math.radians(first_azimuth_deg) + 2.0 * math.pi * i / count
        n = np.array([math.cos(h) * math.cos(psi), math.cos(h) * math.sin(psi), math.sin(h)])
        planes.append((tuple(n), float(n @ apex)))
    return planes


def build_scene(config: SceneConfig, config_hash: str = "") -> Scene:
    """Assemble LED coupling layer, rod, optional crystal and optional detector."""
    c = config
    if c.tip_style not in TIP_STYLES:
        raise InvalidConfigError(f"tip_style must be one of {TIP_STYLES}")
    if not 0.0 < c.tip_full_angle_deg < 180.0 and c.tip_style != "flat":
        raise InvalidConfigError("tip full angle must lie in (0, 180) degrees")
    for label, value in (("rod diameter", c.rod.diameter_mm), ("rod length", c.rod.length_mm),
                         ("coupling thickness", c.coupling.thickness_mm)):
        if not value > 0:
            raise InvalidConfigError(f"{label} must be positive")
    mats = c.materials
    try:
        quartz = mats[c.rod.material]
        fluid = mats[c.coupling.material]
    except KeyError as exc:
        raise InvalidConfigError(f"unknown material {exc}") from None
    r_rod = c.rod.diameter_mm / 2.0
    top = c.rod.length_mm
    apex = np.array([0.0, 0.0, top])
    facets = tip_facet_planes(apex, c.tip_style, c.tip_full_angle_deg)
    tlen = tip_length(r_rod, c.tip_style, c.tip_full_angle_deg)
    if tlen >= c.rod.length_mm:
        raise InvalidConfigError("tip is longer than the rod")

    solids = []
    radius_max = r_rod
    z_max = top
    if c.crystal is not None:
        cr = c.crystal
        if not (cr.diameter_mm > 0 and cr.length_mm > 0 and cr.insertion_depth_mm >= 0):
            raise InvalidConfigError("crystal dimensions must be positive")
        r_c = cr.diameter_mm / 2.0
        z0 = top - cr.insertion_depth_mm
        z1 = z0 + cr.length_mm
        if cr.insertion_depth_mm > 0:
            if r_c < r_rod:
                raise InvalidConfigError("invasive crystal must be at least as wide as the rod")
            if cr.insertion_depth_mm >= cr.length_mm:
                raise InvalidConfigError("waveguide apex must lie inside the crystal")
            if cr.insertion_depth_mm <= tlen:
                raise InvalidConfigError("crystal must fully enclose the waveguide tip")
        try:
            xtal = mats[cr.material]
        except KeyError as exc:
            raise InvalidConfigError(f"unknown material {exc}") from None
        solids.append(Solid.finite_cylinder(r_c, z0, z1, xtal, "crystal"))
        radius_max = max(radius_max, r_c)
        z_max = max(z_max, z1)
    solids.append(Solid.finite_cylinder(r_rod, -c.coupling.thickness_mm, 0.0, fluid, "coupling"))
    solids.append(Solid.finite_cylinder(r_rod, 0.0, top, quartz, "waveguide", extra_planes=facets))
    if c.detector is not None:
        dt = c.detector
        if not (dt.diameter_mm > 0 and dt.thickness_mm > 0 and dt.gap_mm >= 0):
            raise InvalidConfigError("detector dimensions must be positive")
        z0 = top + dt.gap_mm
        solids.append(Solid.finite_cylinder(dt.diameter_mm / 2.0, z0, z0 + dt.thickness_mm,
                                            Material("meter", 1.0, 0.0), "detector"))
        radius_max = max(radius_max, dt.diameter_mm / 2.0)
        z_max = max(z_max, z0 + dt.thickness_mm)
    m = c.margin_mm
    lo = np.array([-radius_max - m, -radius_max - m, -c.coupling.thickness_mm])
    hi = np.array([radius_max + m, radius_max + m, z_max + m])
    return Scene(solids=solids, bbox_lo=lo, bbox_hi=hi, tip_style=c.tip_style,
                 tip_full_angle=c.tip_full_angle_deg if c.tip_style != "flat" else 0.0,
                 tip_planes=facets, apex=apex, retro_center=(0.0, 0.0), retro_radius=r_rod,
                 led_z=-c.coupling.thickness_mm, config_hash=config_hash)


def tip_edge_curves(scene: Scene, samples: int = 64):
    """Facet/shank boundary curves (ellipse arcs) of the waveguide tip, one (n, 3) array per facet."""
    rods = scene.solids_tagged("waveguide")
    if not rods or not scene.tip_planes:
        return []
    rod = rods[0]
    r = rod.radius
    apex = scene.apex
    normals = [np.asarray(n) for n, _ in scene.tip_planes]
    azim = [math.atan2(n[1], n[0]) for n in normals]
    h = math.radians(scene.tip_full_angle) / 2.0
    curves = []
    psi = np.linspace(-math.pi, math.pi, 720, endpoint=False)
    for i, a in enumerate(azim):
        proj = np.cos(psi - a)
        active = proj > 0
        for j, b in enumerate(azim):
            if j != i:
                active &= proj >= np.cos(psi - b)
        if not np.any(active):
            continue
        sel = psi[active]
        # unwrap around the facet azimuth so the arc is contiguous
        sel = np.sort((sel - a + math.pi) % (2 * math.pi) - math.pi + a)
        ps = np.linspace(sel[0], sel[-1], samples)
        z = apex[2] - r / math.tan(h) * np.cos(ps - a)
        curves.append(np.column_stack([r * np.cos(ps), r * np.sin(ps), z]))
    return curves


def write_obj(scene: Scene, path, samples: int = 64):
    """Debug mesh export: tip edge curves as OBJ polylines."""
    lines = ["# pumpmap tip edges"]
    count = 0
    for curve in tip_edge_curves(scene, samples):
        start = count + 1
        for p in curve:
            lines.append(f"v {p[0]!r} {p[1]!r} {p[2]!r}")
            count += 1
        lines.append("l " + " ".join(str(k) for k in range(start, count + 1)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def crystal_volume_analytic(config: SceneConfig) -> float:
    """Crystal volume for flat or wedge tips (cylinder minus the embedded rod)."""
    cr = config.crystal
    r_c = cr.diameter_mm / 2.0
    v = math.pi * r_c ** 2 * cr.length_mm
    if cr.insertion_depth_mm <= 0:
        return v
    r = config.rod.diameter_mm / 2.0
    if config.tip_style == "flat":
        return v - math.pi * r * r * cr.insertion_depth_mm
    if config.tip_style != "wedge":
        raise ValueError("closed form only for flat and wedge tips")
    h = math.radians(config.tip_full_angle_deg) / 2.0
    tl = r / math.tan(h)
    shank = math.pi * r * r * (cr.insertion_depth_mm - tl)
    tip = 2.0 * r ** 3 * (math.pi / 2.0 - 2.0 / 3.0) / math.tan(h)
    return v - shank - tip
