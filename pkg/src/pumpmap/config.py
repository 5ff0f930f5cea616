"""YAML run configurations, content digests and the builders that turn them into objects.

Three document kinds share one loader:

* optical run (``scene``, ``materials``, ``source``, ``trace``): one traced geometry
* cavity (``cavity``, ``mode``): the microwave mode
* comparison (``butt``, ``invasive``, ``cavity`` file references and report inputs)

Every length key carries its unit (``*_mm``).  Unknown keys are rejected so a
misspelt unit never falls back silently to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .emfield import CavitySpec
from .errors import FileFormatError, InvalidConfigError
from .fom import SpinSystemConstants
from .scene import DEFAULT_MATERIALS, Material, SceneConfig, build_scene
from .source import LedSource, Spectrum, effective_absorption, load_spectrum

CONFIG_SCHEMA = "pumpmap-config/1"
BUILTIN_PREFIX = "builtin:"
SEED_ENV = "PUMPMAP_SEED"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    try:
        return sha256_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc


def canonical_hash(obj) -> str:
    """Digest of the parsed document, independent of YAML layout and comments."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return sha256_bytes(text.encode())


def builtin_dir() -> Path:
    return Path(str(resources.files("pumpmap") / "configs"))


def resolve_ref(ref, base_dir: Optional[Path] = None) -> Path:
    """``builtin:<name>`` resolves into the bundled configs, other paths relative to base_dir."""
    ref = str(ref)
    if ref.startswith(BUILTIN_PREFIX):
        path = builtin_dir() / ref[len(BUILTIN_PREFIX):]
        if not path.is_file():
            raise InvalidConfigError(f"unknown builtin config {ref!r}")
        return path
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return path


@dataclass
class LoadedDocument:
    path: Path
    text: str
    data: dict
    digest: str  # canonical content hash
    inputs: dict = field(default_factory=dict)  # resolved path -> text of every file read

    @property
    def base_dir(self) -> Path:
        return self.path.parent


def load_document(ref, base_dir: Optional[Path] = None) -> LoadedDocument:
    path = resolve_ref(ref, base_dir).resolve()
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileFormatError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: top level must be a mapping")
    schema = data.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise InvalidConfigError(f"{path}: unsupported schema {schema!r}")
    return LoadedDocument(path, text, data, canonical_hash(data), {str(path): text})


def _check_keys(section: str, d, allowed):
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise InvalidConfigError(f"section {section!r} must be a mapping")
    unknown = set(d) - set(allowed)
    if unknown:
        raise InvalidConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return d


def _positive_int(name, v) -> int:
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise InvalidConfigError(f"{name} must be a number, got {v!r}") from None
    if f != int(f) or f < 1:
        raise InvalidConfigError(f"{name} must be a positive integer, got {v!r}")
    return int(f)


@dataclass(frozen=True)
class TraceSettings:
    rays: int = 1_000_000
    pitch_mm: float = 0.1
    seed: Optional[int] = None
    batch_size: int = 100_000

    @classmethod
    def from_dict(cls, d):
        d = _check_keys("trace", d, ("rays", "pitch_mm", "seed", "batch_size"))
        out = cls()
        if "rays" in d:
            out = replace(out, rays=_positive_int("trace.rays", d["rays"]))
        if "batch_size" in d:
            out = replace(out, batch_size=_positive_int("trace.batch_size", d["batch_size"]))
        if "pitch_mm" in d:
            if not float(d["pitch_mm"]) > 0:
                raise InvalidConfigError("trace.pitch_mm must be positive")
            out = replace(out, pitch_mm=float(d["pitch_mm"]))
        if d.get("seed") is not None:
            out = replace(out, seed=int(d["seed"]))
        return out


@dataclass(frozen=True)
class OpticalConfig:
    """Everything needed to trace one geometry."""

    scene: SceneConfig
    source: LedSource
    trace: TraceSettings
    placement_offset_mm: float = 0.0
    digest: str = ""

    def build(self):
        """(Scene, LedSource) with the source face on the LED plane of the scene."""
        scene = build_scene(self.scene, self.digest)
        src = replace(self.source, face_center=(0.0, 0.0, scene.led_z))
        return scene, src

    def with_scene(self, **changes) -> "OpticalConfig":
        return replace(self, scene=replace(self.scene, **changes))


SOURCE_KEYS = ("width_mm", "height_mm", "total_power_W", "emission_spectrum", "angular_model",
               "emission_index")


def build_source(d, base_dir=None, inputs=None):
    d = _check_keys("source", d, SOURCE_KEYS)
    spectrum = None
    if d.get("emission_spectrum"):
        spectrum = _spectrum(d["emission_spectrum"], "emission", base_dir, inputs)
    kw = {}
    for key, attr in (("width_mm", "width_mm"), ("height_mm", "height_mm"),
                      ("total_power_W", "total_power"), ("emission_index", "emission_index")):
        if key in d:
            kw[attr] = float(d[key])
    if "angular_model" in d:
        kw["angular_model"] = str(d["angular_model"])
    return LedSource(emission_spectrum=spectrum, **kw)


def _spectrum(ref, kind, base_dir, inputs) -> Spectrum:
    ref = str(ref)
    if not ref.startswith(BUILTIN_PREFIX):
        path = resolve_ref(ref, base_dir).resolve()
        if inputs is not None:
            try:
                inputs[str(path)] = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise FileFormatError(f"cannot read spectrum {path}: {exc}") from exc
        ref = str(path)
    return load_spectrum(ref, kind, base_dir)


MATERIAL_KEYS = ("refractive_index", "absorption_coefficient_per_mm", "absorption_spectrum")


def build_materials(d, emission: Optional[Spectrum], base_dir=None, inputs=None) -> dict:
    """Material table; an absorption spectrum is collapsed to the emission-weighted mean alpha."""
    mats = dict(DEFAULT_MATERIALS)
    for name, spec in (d or {}).items():
        spec = _check_keys(f"materials.{name}", spec, MATERIAL_KEYS)
        base = mats.get(name)
        n = float(spec.get("refractive_index", base.refractive_index if base else float("nan")))
        if "absorption_spectrum" in spec and "absorption_coefficient_per_mm" in spec:
            raise InvalidConfigError(f"material {name!r}: give alpha or a spectrum, not both")
        if "absorption_spectrum" in spec:
            if emission is None:
                raise InvalidConfigError(f"material {name!r}: absorption spectrum needs source.emission_spectrum")
            alpha = effective_absorption(emission, _spectrum(spec["absorption_spectrum"], "absorption",
                                                             base_dir, inputs))
        elif "absorption_coefficient_per_mm" in spec:
            alpha = float(spec["absorption_coefficient_per_mm"])
        else:
            alpha = base.absorption_coefficient if base else 0.0
        if n != n:
            raise InvalidConfigError(f"material {name!r} needs a refractive_index")
        mats[name] = Material(name, n, alpha)
    return mats


OPTICAL_KEYS = ("scene", "materials", "source", "trace", "placement_offset_mm", "label")


def optical_config(doc: LoadedDocument) -> OpticalConfig:
    d = _check_keys(str(doc.path), doc.data, OPTICAL_KEYS)
    if "scene" not in d:
        raise InvalidConfigError(f"{doc.path}: missing 'scene' section")
    source = build_source(d.get("source"), doc.base_dir, doc.inputs)
    mats = build_materials(d.get("materials"), source.emission_spectrum, doc.base_dir, doc.inputs)
    scene_d = dict(_check_keys("scene", d["scene"], (
        "tip_style", "tip_full_angle_deg", "rod", "coupling", "crystal", "detector", "margin_mm")))
    scene = SceneConfig.from_dict(scene_d)
    scene = replace(scene, materials=mats)
    return OpticalConfig(scene, source, TraceSettings.from_dict(d.get("trace")),
                         float(d.get("placement_offset_mm", 0.0)), doc.digest)


@dataclass(frozen=True)
class ModeSettings:
    target_ghz: float = 1.4496
    pitch_mm: float = 0.25
    tune: bool = False


@dataclass(frozen=True)
class CavityConfig:
    spec: CavitySpec
    mode: ModeSettings
    digest: str = ""


def cavity_config(doc: LoadedDocument) -> CavityConfig:
    d = _check_keys(str(doc.path), doc.data, ("cavity", "mode", "label"))
    spec = CavitySpec.from_dict(_check_keys("cavity", d.get("cavity", {}),
                                            [f for f in CavitySpec.__dataclass_fields__]))
    m = _check_keys("mode", d.get("mode", {}), ("target_ghz", "pitch_mm", "tune"))
    mode = ModeSettings(float(m.get("target_ghz", 1.4496)), float(m.get("pitch_mm", 0.25)),
                        bool(m.get("tune", False)))
    if not (mode.target_ghz > 0 and mode.pitch_mm > 0):
        raise InvalidConfigError("mode.target_ghz and mode.pitch_mm must be positive")
    return CavityConfig(spec, mode, doc.digest)


COMPARE_KEYS = ("butt", "invasive", "cavity", "meter", "placement_offset_mm", "spin_constants",
                "pump_power_W", "q0", "pulse_energy_mJ", "threshold_energy_mJ", "seed", "label")


@dataclass(frozen=True)
class CompareConfig:
    butt: OpticalConfig
    invasive: OpticalConfig
    cavity: CavityConfig
    meter: Optional[OpticalConfig] = None
    placement_offset_mm: float = 0.0
    spin_constants: Optional[SpinSystemConstants] = None
    pump_power_W: float = 1.0
    q0: float = 6000.0
    pulse_energy_mJ: float = 6.0
    threshold_energy_mJ: float = 3.3
    seed: Optional[int] = None
    digest: str = ""
    digests: dict = field(default_factory=dict)


def compare_config(doc: LoadedDocument) -> CompareConfig:
    d = _check_keys(str(doc.path), doc.data, COMPARE_KEYS)
    for key in ("butt", "invasive", "cavity"):
        if key not in d:
            raise InvalidConfigError(f"{doc.path}: missing {key!r} reference")
    subs = {}
    for key in ("butt", "invasive", "cavity", "meter"):
        if d.get(key) is not None:
            subs[key] = load_document(d[key], doc.base_dir)
    built = {k: optical_config(v) for k, v in subs.items() if k != "cavity"}
    for v in subs.values():
        doc.inputs.update(v.inputs)  # spectra read while building
    constants = None
    if d.get("spin_constants") is not None:
        constants = SpinSystemConstants.from_dict(d["spin_constants"])
    return CompareConfig(
        butt=built["butt"], invasive=built["invasive"], cavity=cavity_config(subs["cavity"]),
        meter=built.get("meter"), placement_offset_mm=float(d.get("placement_offset_mm", 0.0)),
        spin_constants=constants, pump_power_W=float(d.get("pump_power_W", 1.0)),
        q0=float(d.get("q0", 6000.0)), pulse_energy_mJ=float(d.get("pulse_energy_mJ", 6.0)),
        threshold_energy_mJ=float(d.get("threshold_energy_mJ", 3.3)),
        seed=None if d.get("seed") is None else int(d["seed"]), digest=doc.digest,
        digests={k: v.digest for k, v in subs.items()})


def load_optical(ref, base_dir=None):
    doc = load_document(ref, base_dir)
    return optical_config(doc), doc


def load_cavity(ref, base_dir=None):
    doc = load_document(ref, base_dir)
    return cavity_config(doc), doc


def load_compare(ref, base_dir=None):
    doc = load_document(ref, base_dir)
    return compare_config(doc), doc
