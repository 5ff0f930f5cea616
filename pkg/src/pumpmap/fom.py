"""Overlap factor, cooperativity and the power-meter correction factor.

Conventions: the absorbed-power grid is normalised to 1 W over the region and
the field map to 1 J of stored magnetic energy, so Delta is reported in T^2 W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .emfield import MU0, FieldMap, sample_b2
from .errors import (MissingConstantError, NonPositiveInputError, RegionEmptyError,
                     UnnormalizedInputError, ZeroDetectorPowerError)
from .tracer import VoxelGrid

DELTA_UNITS = "T^2 W (rho normalised to 1 W absorbed, |B|^2 to 1 J stored magnetic energy)"
NORMALIZATION_TOL = 1e-6
ELECTRON_GYROMAGNETIC_RATIO = 1.76085962784e11  # rad s^-1 T^-1


@dataclass(frozen=True)
class SpinSystemConstants:
    """Scalar inputs of the cooperativity formula (SI units)."""

    sigma2: float
    theta_isc_eff: float
    t1_eff_s: float
    t2_star_s: float
    omega_opt_rad_s: float
    q_loaded: float
    gamma_rad_s_T: float = ELECTRON_GYROMAGNETIC_RATIO
    mu0: float = MU0
    placeholder: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.name == "placeholder":
                continue
            v = getattr(self, f.name)
            if v is None:
                raise MissingConstantError(f"spin-system constant {f.name} is not set")
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise NonPositiveInputError(f"spin-system constant {f.name} must be positive, got {v!r}")
        if self.theta_isc_eff > 1:
            raise NonPositiveInputError("theta_isc_eff must not exceed 1")

    @classmethod
    def literature_placeholder(cls, acknowledge: bool = False) -> "SpinSystemConstants":
        """Order-of-magnitude values for pentacene:p-terphenyl; not fitted to any measurement.

        Using them requires ``acknowledge=True`` so absolute cooperativities are
        never produced silently from invented inputs.
        """
        if not acknowledge:
            raise MissingConstantError(
                "placeholder spin constants must be acknowledged explicitly (acknowledge_placeholder: true)")
        omega = 2 * math.pi * 299_792_458.0 / 570e-9
        return cls(sigma2=0.5, theta_isc_eff=0.6, t1_eff_s=20e-6, t2_star_s=0.6e-6,
                   omega_opt_rad_s=omega, q_loaded=6000.0, placeholder=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SpinSystemConstants":
        d = dict(d)
        if d.pop("profile", None) == "literature_placeholder":
            base = cls.literature_placeholder(bool(d.pop("acknowledge_placeholder", False)))
            vals = {f.name: getattr(base, f.name) for f in fields(base)}
            vals.update(d)
            return cls(**vals)
        d.pop("acknowledge_placeholder", None)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise MissingConstantError(f"unknown spin-system constants {sorted(unknown)}")
        required = [f.name for f in fields(cls) if f.name not in ("gamma_rad_s_T", "mu0", "placeholder")]
        missing = [n for n in required if n not in d]
        if missing:
            raise MissingConstantError(f"missing spin-system constants {missing}")
        return cls(**d)


@dataclass
class FomReport:
    delta: float
    delta_uniform: float = float("nan")
    gamma: float = float("nan")
    q_m: float = float("nan")
    q0: float = float("nan")
    threshold_energy_mJ: float = float("nan")
    correction_factor: float = float("nan")
    seeds: dict = field(default_factory=dict)
    config_hashes: dict = field(default_factory=dict)
    digests: dict = field(default_factory=dict)
    units: str = DELTA_UNITS

    def __post_init__(self):
        if self.gamma < 0:
            raise NonPositiveInputError("cooperativity must be non-negative")
        if self.gamma > 0 and math.isfinite(self.q0) and not math.isfinite(self.q_m):
            self.q_m = self.q0 / self.gamma


def _region_points(grid: VoxelGrid, region: Optional[str]):
    mask = grid.region(region)
    if not mask.any():
        raise RegionEmptyError(f"grid has no voxels tagged {region!r}")
    return mask, grid.center_points(mask)


def overlap_delta(grid: VoxelGrid, field: FieldMap, region: Optional[str] = "crystal",
                  *, check_normalization: bool = True) -> float:
    """Midpoint-rule sum of rho * |B|^2(voxel centre) * pitch^3 over the region (T^2 W).

    With ``check_normalization`` the grid must integrate to 1 W over the region
    and the field must store 1 J; pass False to evaluate the raw bilinear form.
    """
    mask, pts = _region_points(grid, region)
    if check_normalization:
        total = grid.integral(region)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise UnnormalizedInputError(f"grid integrates to {total!r} W over {region!r}, expected 1 W")
        energy = field.energy_J()
        if abs(energy - 1.0) > NORMALIZATION_TOL:
            raise UnnormalizedInputError(f"field map stores {energy!r} J, expected 1 J")
    rho = grid.values[mask]
    b2 = sample_b2(field, pts)
    return float(np.sum(rho * b2) * grid.voxel_volume)


def uniform_delta(field: FieldMap, region: Optional[str], grid_or_mask: VoxelGrid) -> float:
    """Delta for rho equal to 1 W spread evenly over the region voxels."""
    grid = grid_or_mask
    mask, pts = _region_points(grid, region)
    volume = mask.sum() * grid.voxel_volume
    b2 = sample_b2(field, pts)
    return float(np.sum(b2) * grid.voxel_volume / volume)


def uniform_grid(grid: VoxelGrid, region: Optional[str] = "crystal") -> VoxelGrid:
    """Same geometry as ``grid`` with 1 W spread uniformly over the region."""
    mask = grid.region(region)
    if not mask.any():
        raise RegionEmptyError(f"grid has no voxels tagged {region!r}")
    values = np.where(mask, 1.0 / (mask.sum() * grid.voxel_volume), 0.0)
    return VoxelGrid(grid.origin.copy(), grid.pitch, values, grid.region_mask.copy())


def region_center(grid: VoxelGrid, region: Optional[str] = "crystal") -> np.ndarray:
    """Midpoint of the bounding box of the region's voxel centres."""
    mask = grid.region(region)
    if not mask.any():
        raise RegionEmptyError(f"grid has no voxels tagged {region!r}")
    idx = np.argwhere(mask)
    lo = grid.origin + (idx.min(axis=0) + 0.5) * grid.pitch
    hi = grid.origin + (idx.max(axis=0) + 0.5) * grid.pitch
    return 0.5 * (lo + hi)


def align_to_field(grid: VoxelGrid, region: Optional[str] = "crystal", offset_mm: float = 0.0) -> VoxelGrid:
    """Translate along z so the region centre sits at z = offset_mm of the field frame.

    Field maps are exchanged with z = 0 on the ring mid-plane, so the default
    centres the crystal on the ring.
    """
    zc = region_center(grid, region)[2]
    return grid.translated((0.0, 0.0, offset_mm - zc))


def cooperativity(constants: Optional[SpinSystemConstants], delta: float, pump_power: float) -> float:
    """Gamma for ``pump_power`` watts absorbed, with Delta in T^2 W per watt.

    The field normalisation gives int |B|^2 dV = 2 mu0 (1 J), so mu0 cancels
    against the prefactor.
    """
    if constants is None:
        raise MissingConstantError("cooperativity needs spin-system constants")
    if pump_power < 0 or delta < 0:
        raise NonPositiveInputError("pump power and delta must be non-negative")
    c = constants
    field_norm = 2.0 * c.mu0 * 1.0
    prefactor = c.mu0 * c.gamma_rad_s_T ** 2 * c.sigma2 * c.theta_isc_eff * c.t1_eff_s * c.t2_star_s / c.omega_opt_rad_s
    return prefactor * c.q_loaded * pump_power * delta / field_norm


def gamma_from_threshold(pulse_energy_mJ: float, threshold_energy_mJ: float) -> float:
    """Cooperativity from the pump energy relative to the masing threshold (linear in power)."""
    if not threshold_energy_mJ > 0:
        raise NonPositiveInputError("threshold energy must be positive")
    if pulse_energy_mJ < 0:
        raise NonPositiveInputError("pulse energy must be non-negative")
    return pulse_energy_mJ / threshold_energy_mJ


def qm_from_gamma(q0: float, gamma: float) -> float:
    if not (q0 > 0 and gamma > 0):
        raise NonPositiveInputError("q0 and gamma must be positive")
    return q0 / gamma


def correction_factor_from_fractions(absorbed_fraction: float, detector_fraction: float) -> float:
    if not detector_fraction > 0:
        raise ZeroDetectorPowerError("no power reached the meter")
    return absorbed_fraction / detector_fraction


def correction_factor(scene_with_meter, scene_with_crystal, source, n_rays: int, *, seed: int = 0,
                      workers: int = 1, pitch: float = 0.1):
    """(crystal-absorbed fraction) / (meter-arrival fraction), from two independent traces.

    Returns (factor, meter TraceResult, crystal TraceResult).
    """
    from .tracer import GridSpec, grid_for_region, trace

    crystal = trace(scene_with_crystal, source, n_rays, grid_for_region(scene_with_crystal, "crystal", pitch),
                    seed=seed, workers=workers)
    # the meter run deposits nothing, a single voxel keeps it cheap
    lo = scene_with_meter.bbox_lo
    meter = trace(scene_with_meter, source, n_rays,
                  GridSpec(tuple(lo), (1, 1, 1), float(np.max(scene_with_meter.bbox_hi - lo))),
                  seed=seed + 1, workers=workers)
    factor = correction_factor_from_fractions(crystal.absorbed_W / crystal.emitted_W,
                                              meter.detector_W / meter.emitted_W)
    return factor, meter, crystal
