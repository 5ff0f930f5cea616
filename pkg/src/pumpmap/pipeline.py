"""End-to-end computations shared by the command line, scripts and acceptance tests.

Frames: traced grids live in the scene frame (LED plane near z = 0, rod along
+z).  Field maps are exchanged with z = 0 on the ring mid-plane.  Before an
overlap the grid is shifted so the crystal's z-centre sits at the placement
offset in that frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import CavityConfig, CompareConfig, OpticalConfig
from .emfield import FieldMap, centered_on_ring, sample_b2, solve_te0_mode, tune_ceiling
from .errors import InvalidArgumentError
from .fom import (align_to_field, cooperativity, gamma_from_threshold, overlap_delta,
                  qm_from_gamma, uniform_delta, uniform_grid)
from .scene import Material
from .tracer import GridSpec, TraceResult, VoxelGrid, grid_for_region, mean_absorption_depth, trace

REGION = "crystal"
SWEEPABLE = {
    "tip_angle": "scene.tip_full_angle_deg (deg)",
    "alpha": "crystal absorption coefficient (1/mm)",
    "insertion_depth": "crystal.insertion_depth_mm (mm)",
    "crystal_diameter": "crystal.diameter_mm (mm)",
}


def derive_seed(master: int, index: int) -> int:
    """Independent child seed for item ``index`` of a run keyed by ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_trace(cfg: OpticalConfig, rays: Optional[int] = None, seed: int = 0, workers: int = 1,
              pitch: Optional[float] = None) -> TraceResult:
    scene, source = cfg.build()
    spec = grid_for_region(scene, REGION, pitch or cfg.trace.pitch_mm) if cfg.scene.crystal else None
    if spec is None:
        # no crystal (meter scene): a single voxel covering the box is enough
        lo = scene.bbox_lo
        spec = GridSpec(tuple(lo), (1, 1, 1), float(np.max(scene.bbox_hi - lo)))
    return trace(scene, source, rays or cfg.trace.rays, spec, seed=seed, workers=workers,
                 batch_size=cfg.trace.batch_size)


def solve_mode(cav: CavityConfig, target_ghz: Optional[float] = None, pitch: Optional[float] = None,
               tune: Optional[bool] = None):
    """(cavity spec actually solved, field map in the ring frame)."""
    target = target_ghz or cav.mode.target_ghz
    pitch = pitch or cav.mode.pitch_mm
    tune = cav.mode.tune if tune is None else tune
    if tune:
        spec, fmap = tune_ceiling(cav.spec, target, pitch)
    else:
        spec, fmap = cav.spec, solve_te0_mode(cav.spec, pitch, target)
    return spec, centered_on_ring(fmap, spec)


def prepared_grid(grid: VoxelGrid, offset_mm: float = 0.0, align: bool = True) -> VoxelGrid:
    """Crystal-normalised grid placed in the ring frame."""
    g = grid.normalized(REGION)
    return align_to_field(g, REGION, offset_mm) if align else g


@dataclass
class OverlapRow:
    label: str
    delta: float
    delta_uniform: float
    grid: VoxelGrid  # normalised, in the ring frame
    absorbed_fraction: float = float("nan")
    correction_factor: float = float("nan")
    mean_depth_mm: float = float("nan")
    seed: Optional[int] = None
    config_hash: str = ""
    ratio: float = float("nan")
    gamma: float = float("nan")
    qm: float = float("nan")
    gamma_threshold: float = float("nan")
    qm_threshold: float = float("nan")


def overlap_row(label: str, grid: VoxelGrid, fmap: FieldMap, offset_mm: float = 0.0,
                align: bool = True) -> OverlapRow:
    g = prepared_grid(grid, offset_mm, align)
    return OverlapRow(label, overlap_delta(g, fmap, REGION), uniform_delta(fmap, REGION, g), g)


@dataclass
class CompareResult:
    rows: list
    field: FieldMap
    cavity_spec: object
    traces: dict = field(default_factory=dict)
    meter_detector_fraction: float = float("nan")

    def row(self, label) -> OverlapRow:
        return next(r for r in self.rows if r.label == label)


def compare(cc: CompareConfig, rays: Optional[int] = None, seed: int = 0, workers: int = 1,
            include_uniform: bool = True, fmap: Optional[FieldMap] = None, cavity_spec=None,
            pitch: Optional[float] = None) -> CompareResult:
    """Butt-coupled, invasive and (optionally) uniform pumping in one cavity mode.

    Trace seeds derive from ``seed``: butt 0, invasive 1, meter 2.
    """
    if fmap is None:
        cavity_spec, fmap = solve_mode(cc.cavity)
    traces = {}
    rows = []
    for i, (label, cfg) in enumerate((("butt", cc.butt), ("invasive", cc.invasive))):
        s = derive_seed(seed, i)
        res = run_trace(cfg, rays, s, workers, pitch)
        traces[label] = res
        row = overlap_row(label, res.grid, fmap, cc.placement_offset_mm)
        row.seed = s
        row.config_hash = cfg.digest
        row.absorbed_fraction = res.fraction("absorbed_W")
        rows.append(row)
    meter_fraction = float("nan")
    if cc.meter is not None:
        s = derive_seed(seed, 2)
        meter = run_trace(cc.meter, rays, s, workers)
        traces["meter"] = meter
        meter_fraction = meter.fraction("detector_W")
        for row in rows:
            row.correction_factor = row.absorbed_fraction / meter_fraction
    if include_uniform:
        inv = rows[1]
        ug = uniform_grid(inv.grid, REGION)
        rows.append(OverlapRow("uniform", inv.delta_uniform, inv.delta_uniform, ug,
                               config_hash=cc.invasive.digest))
    base = rows[0].delta
    for row in rows:
        row.ratio = row.delta / base
        if cc.spin_constants is not None:
            row.gamma = cooperativity(cc.spin_constants, row.delta, cc.pump_power_W)
            if row.gamma > 0:
                row.qm = qm_from_gamma(cc.q0, row.gamma)
    inv = rows[1]
    inv.gamma_threshold = gamma_from_threshold(cc.pulse_energy_mJ, cc.threshold_energy_mJ)
    inv.qm_threshold = qm_from_gamma(cc.q0, inv.gamma_threshold)
    return CompareResult(rows, fmap, cavity_spec, traces, meter_fraction)


def projections(row: OverlapRow, fmap: FieldMap, axis: int = 1):
    """Crystal-masked column sums of rho, |B|^2 and rho*|B|^2 along ``axis``.

    Each image times pitch^3 sums to the volume integral of its quantity, so
    the rho image integrates to 1 W and the product image to Delta.
    """
    g = row.grid
    mask = g.region(REGION)
    b2 = np.zeros(g.dims)
    b2[mask] = sample_b2(fmap, g.center_points(mask))
    rho = np.where(mask, g.values, 0.0)
    others = [i for i in range(3) if i != axis]
    u, v = g.centers(others[0]), g.centers(others[1])
    return {
        "rho": (rho.sum(axis=axis), u, v, "W/mm^3 summed over voxel column"),
        "b2": (b2.sum(axis=axis), u, v, "T^2 per J summed over voxel column"),
        "rho_b2": ((rho * b2).sum(axis=axis), u, v, "T^2 W/mm^3 summed over voxel column"),
    }


def swept_config(cfg: OpticalConfig, parameter: str, value: float) -> OpticalConfig:
    sc = cfg.scene
    if parameter == "tip_angle":
        return cfg.with_scene(tip_full_angle_deg=float(value))
    if sc.crystal is None:
        raise InvalidArgumentError(f"sweeping {parameter!r} needs a crystal in the scene")
    if parameter == "alpha":
        name = sc.crystal.material
        old = sc.materials[name]
        mats = dict(sc.materials)
        mats[name] = Material(name, old.refractive_index, float(value))
        return cfg.with_scene(materials=mats)
    if parameter == "insertion_depth":
        return cfg.with_scene(crystal=replace(sc.crystal, insertion_depth_mm=float(value)))
    if parameter == "crystal_diameter":
        return cfg.with_scene(crystal=replace(sc.crystal, diameter_mm=float(value)))
    raise InvalidArgumentError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEPABLE)}")


@dataclass
class SweepPoint:
    index: int
    value: float
    seed: int
    absorbed_fraction: float
    escaped_fraction: float
    mean_depth_mm: float
    delta: float = float("nan")
    gamma: float = float("nan")


def sweep(cfg: OpticalConfig, parameter: str, values, seed: int = 0, rays: Optional[int] = None,
          workers: int = 1, fmap: Optional[FieldMap] = None, offset_mm: float = 0.0,
          constants=None, pump_power_W: float = 1.0, pitch: Optional[float] = None):
    """One trace per value; point i is seeded with derive_seed(seed, i)."""
    if parameter not in SWEEPABLE:
        raise InvalidArgumentError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEPABLE)}")
    points = []
    for i, v in enumerate(values):
        c = swept_config(cfg, parameter, v)
        s = derive_seed(seed, i)
        res = run_trace(c, rays, s, workers, pitch)
        scene, _ = c.build()
        entry = float(scene.region_aabb(REGION)[0][2])
        p = SweepPoint(i, float(v), s, res.fraction("absorbed_W"), res.fraction("escaped_W"),
                       mean_absorption_depth(res, "z", entry))
        if fmap is not None:
            p.delta = overlap_row(parameter, res.grid, fmap, offset_mm).delta
            if constants is not None:
                p.gamma = cooperativity(constants, p.delta, pump_power_W)
        points.append(p)
    return points
