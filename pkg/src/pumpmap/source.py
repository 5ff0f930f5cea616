"""LED source: flat rectangular Lambertian emitter and spectral helpers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainMismatchError, FileFormatError, InvalidConfigError
from .scene import Ray

SPECTRUM_HEADER = ["wavelength_nm", "value"]
BUILTIN_SPECTRA = {
    "led_le_cg_p2aq": "led_le_cg_p2aq_emission.csv",
    "ptc_ptp_0.1pct": "ptc_ptp_0p1pct_absorption.csv",
}


@dataclass(frozen=True)
class Spectrum:
    wavelengths: np.ndarray
    values: np.ndarray
    kind: str = "emission"  # or "absorption" (values in mm^-1)

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, float)
        v = np.asarray(self.values, float)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", v)
        if wl.ndim != 1 or wl.shape != v.shape or len(wl) < 2:
            raise InvalidConfigError("spectrum needs at least two (wavelength, value) samples")
        if np.any(np.diff(wl) <= 0):
            raise InvalidConfigError("spectrum wavelengths must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidConfigError("spectrum values must be finite and non-negative")
        if self.kind not in ("emission", "absorption"):
            raise InvalidConfigError(f"unknown spectrum kind {self.kind!r}")
        if self.kind == "emission" and trapezoid(v, wl) <= 0:
            raise InvalidConfigError("emission spectrum must integrate to a positive number")

    def __call__(self, wl):
        return np.interp(wl, self.wavelengths, self.values, left=0.0, right=0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw wavelengths with density proportional to the (linear-interpolated) curve."""
        wl, v = self.wavelengths, self.values
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(wl))])
        return np.interp(rng.random(n) * cdf[-1], cdf, wl)


def read_spectrum(path, kind="emission") -> Spectrum:
    """Read a two-column ``wavelength_nm,value`` CSV."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FileFormatError(f"cannot read spectrum {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != SPECTRUM_HEADER:
        raise FileFormatError(f"{path}: expected header 'wavelength_nm,value'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:] if a.strip()])
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    return Spectrum(data[:, 0], data[:, 1], kind)


def write_spectrum(spectrum: Spectrum, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(SPECTRUM_HEADER) + "\n")
        for w, v in zip(spectrum.wavelengths, spectrum.values):
            fh.write(f"{float(w)!r},{float(v)!r}\n")


def load_spectrum(ref: str, kind="emission", base_dir: Optional[Path] = None) -> Spectrum:
    """Load ``builtin:<name>`` from package data or a CSV path (relative to base_dir)."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_SPECTRA:
            raise InvalidConfigError(f"unknown builtin spectrum {name!r}")
        with resources.as_file(resources.files("pumpmap.data") / BUILTIN_SPECTRA[name]) as p:
            return read_spectrum(p, kind)
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return read_spectrum(path, kind)


def effective_absorption(emission: Spectrum, absorption: Spectrum) -> float:
    """Emission-weighted mean absorption coefficient (mm^-1).

    Both curves are linearly interpolated onto the union of their sample
    grids inside the emission support, then integrated by trapezoids.
    """
    e_lo, e_hi = emission.wavelengths[0], emission.wavelengths[-1]
    a_lo, a_hi = absorption.wavelengths[0], absorption.wavelengths[-1]
    if e_lo < a_lo or e_hi > a_hi:
        raise DomainMismatchError(
            f"emission support [{e_lo}, {e_hi}] nm lies outside absorption data [{a_lo}, {a_hi}] nm")
    grid = np.union1d(emission.wavelengths, absorption.wavelengths)
    grid = grid[(grid >= e_lo) & (grid <= e_hi)]
    e = np.interp(grid, emission.wavelengths, emission.values)
    a = np.interp(grid, absorption.wavelengths, absorption.values)
    return float(trapezoid(e * a, grid) / trapezoid(e, grid))


@dataclass(frozen=True)
class LedSource:
    """Rectangular emitter in the plane z = face_center[2], emitting towards +z.

    ``emission_index`` is the refractive index of the medium in which the
    Lambertian pattern is defined; the tracer maps directions into the medium
    in front of the face by Snell's law.
    """

    face_center: tuple = (0.0, 0.0, 0.0)
    width_mm: float = 3.2
    height_mm: float = 2.6
    total_power: float = 1.0
    emission_spectrum: Optional[Spectrum] = None
    angular_model: str = "lambertian"
    emission_index: float = 1.0

    def __post_init__(self):
        if not self.total_power > 0:
            raise InvalidConfigError("source total power must be positive")
        if not (self.width_mm > 0 and self.height_mm > 0):
            raise InvalidConfigError("source face must have positive extent")
        if self.angular_model not in ("lambertian", "collimated"):
            raise InvalidConfigError(f"unknown angular model {self.angular_model!r}")
        if not self.emission_index >= 1.0:
            raise InvalidConfigError("emission index must be >= 1")


def ray_stream(seed: int, batch: int, lane: int = 0) -> np.random.Generator:
    """Deterministic generator for (global seed, batch index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(batch), int(lane)))
    return np.random.Generator(np.random.PCG64(ss))


def sample_rays(source: LedSource, n: int, rng: np.random.Generator):
    """Vectorised sampling: (origins (n,3), directions (n,3), weights (n,), wavelengths (n,))."""
    u = rng.random((n, 2))
    origins = np.empty((n, 3))
    origins[:, 0] = source.face_center[0] + (u[:, 0] - 0.5) * source.width_mm
    origins[:, 1] = source.face_center[1] + (u[:, 1] - 0.5) * source.height_mm
    origins[:, 2] = source.face_center[2]
    dirs = np.empty((n, 3))
    if source.angular_model == "lambertian":
        v = rng.random((n, 2))
        sin_t = np.sqrt(v[:, 0])
        phi = 2.0 * math.pi * v[:, 1]
        dirs[:, 0] = sin_t * np.cos(phi)
        dirs[:, 1] = sin_t * np.sin(phi)
        dirs[:, 2] = np.sqrt(1.0 - v[:, 0])
    else:
        dirs[:] = (0.0, 0.0, 1.0)
    weights = np.full(n, source.total_power / n)
    if source.emission_spectrum is not None:
        wl = source.emission_spectrum.sample(rng, n)
    else:
        wl = np.full(n, 570.0)
    return origins, dirs, weights, wl


def sample_ray(source: LedSource, rng: np.random.Generator, n_rays: int = 1) -> Ray:
    """One ray; its weight is total_power / n_rays for a run of n_rays."""
    o, d, _, wl = sample_rays(source, 1, rng)
    return Ray(origin=o[0], direction=d[0], weight=source.total_power / n_rays, wavelength=float(wl[0]))
