"""Monte Carlo photon transport with Fresnel interfaces and Beer-Lambert voxel deposition."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import GridTooSmallError, InvalidArgumentError, NoAbsorptionError
from .scene import REGION_CODES, Scene, contains_many
from .source import LedSource, ray_stream, sample_rays

DEFAULT_PITCH_MM = 0.1
WEIGHT_CUTOFF = 1e-4
BOUNCE_LIMIT = 10_000
NONCONVERGED_WARN_FRACTION = 1e-3


@dataclass(frozen=True)
class FresnelResult:
    reflectance: float
    transmittance: float
    tir: bool
    cos_transmitted: float


def fresnel(n1: float, n2: float, cos_incident: float) -> FresnelResult:
    """Unpolarised power reflectance (mean of s and p) at a planar interface."""
    if not (n1 >= 1.0 and n2 >= 1.0):
        raise InvalidArgumentError("refractive indices must be >= 1")
    if not 0.0 < cos_incident <= 1.0:
        raise InvalidArgumentError("cos_incident must lie in (0, 1]")
    r, cos_t = K.fresnel_unpolarized(float(n1), float(n2), float(cos_incident))
    tir = r >= 1.0
    return FresnelResult(r, 1.0 - r, tir, cos_t)


def reflect(direction, normal):
    d = np.asarray(direction, float)
    n = np.asarray(normal, float)
    return d - 2.0 * (d @ n) * n


def refract(direction, normal, n1, n2):
    """Snell-refracted unit direction, or None on total internal reflection.

    ``normal`` may point either way; it is flipped to face the incoming ray.
    """
    d = np.asarray(direction, float)
    n = np.asarray(normal, float)
    cos_i = -(d @ n)
    if cos_i < 0:
        n, cos_i = -n, -cos_i
    res = fresnel(n1, n2, max(cos_i, 1e-300))
    if res.tir:
        return None
    eta = n1 / n2
    t = eta * d + (eta * cos_i - res.cos_transmitted) * n
    return t / np.linalg.norm(t)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    dims: tuple
    pitch: float = DEFAULT_PITCH_MM

    @property
    def upper(self):
        return np.asarray(self.origin) + np.asarray(self.dims) * self.pitch


def grid_for_region(scene: Scene, tag: str = "crystal", pitch: float = DEFAULT_PITCH_MM,
                    pad: int = 1) -> GridSpec:
    """Smallest pitch-aligned grid covering every solid tagged ``tag``, plus ``pad`` voxels."""
    box = scene.region_aabb(tag)
    if box is None:
        raise InvalidArgumentError(f"scene has no {tag!r} region")
    lo = (np.floor(box[0] / pitch) - pad) * pitch
    hi = (np.ceil(box[1] / pitch) + pad) * pitch
    dims = tuple(int(round(v)) for v in (hi - lo) / pitch)
    return GridSpec(tuple(float(v) for v in lo), dims, float(pitch))


@dataclass(eq=False)
class VoxelGrid:
    """Absorbed power density (W/mm^3) on cubic voxels, indexed values[ix, iy, iz]."""

    origin: np.ndarray
    pitch: float
    values: np.ndarray
    region_mask: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, float)
        self.values = np.asarray(self.values, float)
        self.region_mask = np.asarray(self.region_mask, np.uint8)
        if self.values.ndim != 3 or self.values.shape != self.region_mask.shape:
            raise InvalidArgumentError("values and region_mask must be matching 3-D arrays")

    @property
    def dims(self):
        return tuple(self.values.shape)

    @property
    def voxel_volume(self):
        return self.pitch ** 3

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.pitch

    def center_points(self, mask=None) -> np.ndarray:
        ix, iy, iz = np.nonzero(np.ones(self.dims, bool) if mask is None else mask)
        idx = np.column_stack([ix, iy, iz])
        return self.origin + (idx + 0.5) * self.pitch

    def region(self, tag: Optional[str]) -> np.ndarray:
        if tag is None:
            return np.ones(self.dims, bool)
        return self.region_mask == REGION_CODES[tag]

    def integral(self, region: Optional[str] = None) -> float:
        """Total power (W) in the region."""
        return float(self.values[self.region(region)].sum() * self.voxel_volume)

    def normalized(self, region: Optional[str] = "crystal", total: float = 1.0) -> "VoxelGrid":
        """Rescaled copy whose integral over ``region`` equals ``total`` watts."""
        s = self.integral(region)
        if not s > 0:
            raise NoAbsorptionError("cannot normalise a grid with no power in the region")
        return replace(self, values=self.values * (total / s))

    def translated(self, offset) -> "VoxelGrid":
        return replace(self, origin=self.origin + np.asarray(offset, float))

    def projection(self, axis: int) -> np.ndarray:
        """Sum over one axis (W/mm^3 summed along voxel columns)."""
        return self.values.sum(axis=axis)


@dataclass(eq=False)
class TraceResult:
    grid: VoxelGrid
    emitted_W: float
    absorbed_W: float
    escaped_W: float
    retro_reflected_W: float
    detector_W: float
    terminated_W: float
    rays_traced: int
    seed: int
    config_hash: str = ""
    nonconverged_W: float = 0.0
    batch_tallies: np.ndarray = field(default_factory=lambda: np.zeros((0, K.N_TALLIES)))
    batch_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    deposit_moment: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    @property
    def budget_sum(self) -> float:
        return (self.absorbed_W + self.escaped_W + self.retro_reflected_W + self.detector_W
                + self.terminated_W)

    def fraction(self, tally: str) -> float:
        return getattr(self, tally) / self.emitted_W

    def fraction_sigma(self, tally: str) -> float:
        """Standard error of a tally fraction from the spread of equal-size batches."""
        col = {"absorbed_W": K.ABSORBED, "escaped_W": K.ESCAPED, "retro_reflected_W": K.RETRO,
               "detector_W": K.DETECTOR, "terminated_W": K.TERMINATED}[tally]
        n = len(self.batch_sizes)
        if n < 2:
            return math.inf
        per_ray = self.emitted_W / self.rays_traced
        frac = self.batch_tallies[:, col] / (self.batch_sizes * per_ray)
        w = self.batch_sizes / self.batch_sizes.sum()
        mean = np.sum(w * frac)
        var = np.sum(w * (frac - mean) ** 2) * n / (n - 1)
        return float(math.sqrt(var / n))

    def summary(self) -> dict:
        return {
            "emitted_W": self.emitted_W,
            "absorbed_fraction": self.fraction("absorbed_W"),
            "escaped_fraction": self.fraction("escaped_W"),
            "retro_reflected_fraction": self.fraction("retro_reflected_W"),
            "detector_fraction": self.fraction("detector_W"),
            "terminated_fraction": self.fraction("terminated_W"),
            "rays": self.rays_traced,
            "seed": self.seed,
        }


def _launch(scene: Scene, source: LedSource, origins, dirs):
    """Map Lambertian directions from the emission medium into the medium at the LED face.

    Rays that cannot enter the face medium (emission index above the face
    index, beyond the critical angle) are returned as a mask of rejects.
    """
    probe = np.asarray(source.face_center, float) + np.array([0.0, 0.0, K.NUDGE])
    s = K.locate(scene.arrays[0], scene.arrays[1], probe)
    n_face = scene.mat_n[0 if s < 0 else scene.solid_mat[s]]
    if n_face == source.emission_index:
        return dirs, np.zeros(len(dirs), bool)
    eta = source.emission_index / n_face
    sin2 = eta * eta * (dirs[:, 0] ** 2 + dirs[:, 1] ** 2)
    reject = sin2 >= 1.0
    out = dirs.copy()
    out[:, :2] *= eta
    out[:, 2] = np.sqrt(np.clip(1.0 - sin2, 0.0, None))
    return out, reject


def _check_grid(scene: Scene, spec: GridSpec):
    lo = np.asarray(spec.origin)
    hi = spec.upper
    for s in scene.solids:
        if s.material.absorption_coefficient > 0:
            slo, shi = s.aabb()
            if np.any(slo < lo - 1e-9) or np.any(shi > hi + 1e-9):
                raise GridTooSmallError(
                    f"absorbing {s.region_tag} region [{slo}, {shi}] exceeds grid [{lo}, {hi}]")


def region_mask_for(scene: Scene, spec: GridSpec) -> np.ndarray:
    nx, ny, nz = spec.dims
    o = np.asarray(spec.origin)
    p = spec.pitch
    gx, gy, gz = np.meshgrid(o[0] + (np.arange(nx) + 0.5) * p, o[1] + (np.arange(ny) + 0.5) * p,
                             o[2] + (np.arange(nz) + 0.5) * p, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return contains_many(pts, scene).reshape(nx, ny, nz)


def _batch_plan(n_rays: int, batch_size: int):
    n_batches = max(1, math.ceil(n_rays / batch_size))
    base, extra = divmod(n_rays, n_batches)
    return [base + (1 if b < extra else 0) for b in range(n_batches)]


def _kernel_seed(seed: int, batch: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(batch), 1))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _tree_sum(items):
    """Pairwise reduction in fixed order (deterministic for a given item count)."""
    items = list(items)
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def trace(scene: Scene, source: LedSource, n_rays: int, grid_spec: Optional[GridSpec] = None, *,
          seed: int = 0, workers: int = 1, batch_size: int = 100_000,
          weight_cutoff: float = WEIGHT_CUTOFF, bounce_limit: int = BOUNCE_LIMIT) -> TraceResult:
    """Trace ``n_rays`` rays from ``source`` through ``scene``.

    Batches are the unit of work; batch b always draws from the streams
    keyed by (seed, b), and worker k handles batches k, k + workers, ...
    Worker grids are summed pairwise in worker order, so results are
    bit-reproducible for a fixed worker count.
    """
    n_rays = int(n_rays)
    if n_rays < 1:
        raise InvalidArgumentError("n_rays must be >= 1")
    if workers < 1:
        raise InvalidArgumentError("workers must be >= 1")
    if grid_spec is None:
        grid_spec = grid_for_region(scene, "crystal")
    _check_grid(scene, grid_spec)
    sizes = _batch_plan(n_rays, batch_size)
    w0 = source.total_power / n_rays
    origin = np.asarray(grid_spec.origin, float)
    pitch = float(grid_spec.pitch)
    retro_c = np.asarray(scene.retro_center, float)
    n_batches = len(sizes)
    batch_tallies = np.zeros((n_batches, K.N_TALLIES))
    batch_moments = np.zeros((n_batches, 3))

    def run_worker(k):
        values = np.zeros(grid_spec.dims)
        for b in range(k, n_batches, workers):
            rng = ray_stream(seed, b, 0)
            o, d, _, _ = sample_rays(source, sizes[b], rng)
            d, reject = _launch(scene, source, o, d)
            batch_tallies[b, K.RETRO] += w0 * np.count_nonzero(reject)
            keep = ~reject
            K.trace_batch(*scene.arrays, scene.mat_n,
                          scene.mat_alpha, origin, pitch, values,
                          np.ascontiguousarray(o[keep]), np.ascontiguousarray(d[keep]), w0,
                          _kernel_seed(seed, b), weight_cutoff, bounce_limit, retro_c,
                          scene.retro_radius, batch_tallies[b], batch_moments[b])
        return values

    if workers == 1:
        grids = [run_worker(0)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grids = list(pool.map(run_worker, range(workers)))
    values = _tree_sum(grids) / pitch ** 3
    totals = _tree_sum(list(batch_tallies))
    moment = _tree_sum(list(batch_moments))
    grid = VoxelGrid(origin, pitch, values, region_mask_for(scene, grid_spec))
    result = TraceResult(
        grid=grid, emitted_W=source.total_power, absorbed_W=float(totals[K.ABSORBED]),
        escaped_W=float(totals[K.ESCAPED]), retro_reflected_W=float(totals[K.RETRO]),
        detector_W=float(totals[K.DETECTOR]), terminated_W=float(totals[K.TERMINATED]),
        rays_traced=n_rays, seed=int(seed), config_hash=scene.config_hash,
        nonconverged_W=float(totals[K.NONCONVERGED]), batch_tallies=batch_tallies,
        batch_sizes=np.asarray(sizes, dtype=np.int64), deposit_moment=moment)
    if result.nonconverged_W > NONCONVERGED_WARN_FRACTION * result.emitted_W:
        msg = (f"bounce limit reached for {result.nonconverged_W / result.emitted_W:.3%} "
               "of emitted power")
        result.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return result


_AXES = {"x": 0, "y": 1, "z": 2}


def mean_absorption_depth(result: TraceResult, axis="z", entry: Optional[float] = None) -> float:
    """Power-weighted mean deposition depth along ``axis`` from the entry plane.

    Uses the tracer's exact per-segment moment tally when present, otherwise
    voxel centres.  ``entry`` defaults to the grid origin on that axis.
    """
    ax = _AXES.get(axis, axis)
    if not result.absorbed_W > 0:
        raise NoAbsorptionError("no absorbed power")
    grid = result.grid
    if entry is None:
        entry = float(grid.origin[ax])
    if result.deposit_moment is not None:
        return float(result.deposit_moment[ax] / result.absorbed_W - entry)
    prof = grid.values.sum(axis=tuple(i for i in range(3) if i != ax))
    total = prof.sum()
    if not total > 0:
        raise NoAbsorptionError("no absorbed power in grid")
    return float((prof * grid.centers(ax)).sum() / total - entry)
