"""Command-line front end.

Commands: trace, mode, overlap, compare, sweep, inspect, replay.

Exit codes: 0 ok, 2 bad arguments, 3 invalid config, 4 file/IO error,
5 numeric failure.  Every command that writes files also writes a JSON run
manifest (argv, input texts and digests, seed, version, timestamps, output
digests) from which ``pumpmap replay`` reruns it.  Reports carry no
timestamps, so a fixed seed with one worker reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import pipeline as P
from .config import (SEED_ENV, load_cavity, load_compare, load_document, load_optical, sha256_bytes,
                     sha256_file)
from .errors import FileFormatError, InvalidArgumentError, PumpmapError
from .fom import DELTA_UNITS, SpinSystemConstants, cooperativity, qm_from_gamma
from .formats import (export_field_map, grid_projection, import_field_map, inspect_file, read_vgd,
                      write_projection_csv, write_vgd)

MANIFEST_SCHEMA = "pumpmap-manifest/1"
REPORT_SCHEMA = "pumpmap-report/1"
SWEEP_SCHEMA = "pumpmap-sweep/1"
REPORT_COLUMNS = ["label", "delta_T2W", "delta_uniform_T2W", "ratio", "gamma", "qm", "gamma_threshold",
                  "qm_threshold", "absorbed_fraction", "correction_factor", "seed", "config_hash",
                  "grid_sha256", "field_sha256"]
SWEEP_COLUMNS = ["index", "parameter", "value", "seed", "absorbed_fraction", "escaped_fraction",
                 "mean_absorption_depth_mm", "delta_T2W", "gamma"]
AXES = {"x": 0, "y": 1, "z": 2}


def parse_count(text: str) -> int:
    """Positive integer, accepting forms such as 1e7 or 1_000_000."""
    try:
        v = float(str(text).replace("_", ""))
    except ValueError:
        raise InvalidArgumentError(f"not a number: {text!r}") from None
    if not math.isfinite(v) or v != int(v) or v < 1:
        raise InvalidArgumentError(f"expected a positive integer, got {text!r}")
    return int(v)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, comment: str, columns, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row.get(c)) for c in columns])
    except OSError as exc:
        raise FileFormatError(f"cannot write {path}: {exc}") from exc


def read_report(path):
    """Rows of a report or sweep CSV as dicts of strings (comment line skipped)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunRecord:
    """Collects what a manifest needs while a command runs."""

    def __init__(self, command: str, argv):
        self.command = command
        self.argv = list(argv)
        self.started = _now()
        self.inputs = {}
        self.argv_inputs = {}
        self.argv_outputs = {}
        self.outputs = {}
        self.config_digests = {}
        self.seed = None
        self.summary = {}

    def add_document(self, token, doc, role="config"):
        for path, text in doc.inputs.items():
            self.inputs[path] = {"sha256": sha256_bytes(text.encode()), "text": text}
        self.argv_inputs[str(token)] = str(doc.path)
        self.config_digests[role] = doc.digest

    def add_binary(self, token, path):
        p = str(Path(path).resolve())
        self.inputs[p] = {"sha256": sha256_file(p), "text": None}
        self.argv_inputs[str(token)] = p

    def add_output(self, path, token=None):
        p = Path(path).resolve()
        self.outputs[p.name] = {"path": str(p), "sha256": sha256_file(p)}
        if token is not None:
            self.argv_outputs[str(token)] = str(p)

    def write(self, path):
        doc = {
            "schema": MANIFEST_SCHEMA, "tool": "pumpmap", "version": __version__,
            "command": self.command, "argv": self.argv, "cwd": os.getcwd(), "seed": self.seed,
            "config_digests": self.config_digests, "inputs": self.inputs,
            "argv_inputs": self.argv_inputs, "argv_outputs": self.argv_outputs,
            "outputs": self.outputs, "summary": self.summary,
            "started_utc": self.started, "finished_utc": _now(),
        }
        try:
            Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            raise FileFormatError(f"cannot write manifest {path}: {exc}") from exc


def resolve_seed(arg_seed, config_seed=None) -> int:
    """--seed, then the config's seed, then $PUMPMAP_SEED, then 0."""
    if arg_seed is not None:
        return int(arg_seed)
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise InvalidArgumentError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest) if getattr(args, "manifest", None) else default


def _workers(args) -> int:
    if args.workers < 1:
        raise InvalidArgumentError("--workers must be >= 1")
    return args.workers


def _print(**items):
    for k, v in items.items():
        print(f"{k:28s} {_fmt(v)}")


# ---------------------------------------------------------------- commands

def cmd_trace(args, rec: RunRecord) -> int:
    cfg, doc = load_optical(args.config)
    rec.add_document(args.config, doc)
    rays = parse_count(args.rays) if args.rays is not None else cfg.trace.rays
    seed = rec.seed = resolve_seed(args.seed, cfg.trace.seed)
    res = P.run_trace(cfg, rays, seed, _workers(args), args.pitch)
    write_vgd(res.grid, args.out)
    rec.add_output(args.out, args.out)
    if args.project:
        axis = AXES[args.project]
        out = args.project_out or str(Path(args.out).with_suffix("")) + f"_proj_{args.project}.csv"
        image, u, v = grid_projection(res.grid, axis)
        write_projection_csv(out, image, u, v, axis, "absorbed_power_density", "W/mm^3 summed over voxel column")
        rec.add_output(out, args.project_out)
    rec.summary = dict(res.summary(), budget_relative_error=abs(res.budget_sum - res.emitted_W) / res.emitted_W,
                       absorbed_fraction_sigma=res.fraction_sigma("absorbed_W"), warnings=res.warnings)
    _print(**{k: v for k, v in rec.summary.items() if k != "warnings"})
    rec.write(_manifest_path(args, Path(args.out + ".manifest.json")))
    return 0


def cmd_mode(args, rec: RunRecord) -> int:
    cav, doc = load_cavity(args.config)
    rec.add_document(args.config, doc)
    tune = None if args.tune is None else args.tune == "on"
    spec, fmap = P.solve_mode(cav, args.target_ghz, args.pitch, tune)
    export_field_map(fmap, args.out)
    rec.add_output(args.out, args.out)
    rec.summary = {"freq_ghz": fmap.freq_ghz, "ceiling_mm": spec.ceiling_mm,
                   "ring_energy_fraction": fmap.ring_fraction, "eigen_residual": fmap.residual,
                   "frame": "z = 0 on the ring mid-plane"}
    _print(**rec.summary)
    rec.write(_manifest_path(args, Path(args.out + ".manifest.json")))
    return 0


def _constants(args, rec):
    if not args.constants:
        return None
    doc = load_document(args.constants)
    rec.add_document(args.constants, doc, "spin_constants")
    return SpinSystemConstants.from_dict(doc.data.get("spin_constants", doc.data))


def _report_row(row: P.OverlapRow, **extra) -> dict:
    d = {"label": row.label, "delta_T2W": row.delta, "delta_uniform_T2W": row.delta_uniform,
         "ratio": row.ratio, "gamma": row.gamma, "qm": row.qm, "gamma_threshold": row.gamma_threshold,
         "qm_threshold": row.qm_threshold, "absorbed_fraction": row.absorbed_fraction,
         "correction_factor": row.correction_factor, "seed": row.seed, "config_hash": row.config_hash}
    d.update(extra)
    return d


def cmd_overlap(args, rec: RunRecord) -> int:
    grid = read_vgd(args.grid)
    fmap = import_field_map(args.field)
    rec.add_binary(args.grid, args.grid)
    rec.add_binary(args.field, args.field)
    constants = _constants(args, rec)
    if args.region != P.REGION:
        raise InvalidArgumentError(f"only the {P.REGION!r} region is supported")
    row = P.overlap_row("overlap", grid, fmap, args.placement_offset_mm, not args.no_align)
    row.ratio = row.delta / row.delta_uniform
    if constants is not None:
        row.gamma = cooperativity(constants, row.delta, args.pump_power_W)
        if row.gamma > 0:
            row.qm = qm_from_gamma(args.q0, row.gamma)
    _write_csv(args.out, f"{REPORT_SCHEMA} units={DELTA_UNITS}; ratio relative to uniform pumping",
               REPORT_COLUMNS, [_report_row(row, grid_sha256=sha256_file(args.grid),
                                            field_sha256=sha256_file(args.field))])
    rec.add_output(args.out, args.out)
    rec.summary = {"delta_T2W": row.delta, "delta_uniform_T2W": row.delta_uniform,
                   "field_renormalized": fmap.renormalized}
    if fmap.renormalized:
        print("note: field map did not store 1 J and was renormalised", file=sys.stderr)
    _print(**rec.summary)
    rec.write(_manifest_path(args, Path(args.out + ".manifest.json")))
    return 0


def cmd_compare(args, rec: RunRecord) -> int:
    cc, doc = load_compare(args.config)
    rec.add_document(args.config, doc)
    rays = parse_count(args.rays) if args.rays is not None else None
    seed = rec.seed = resolve_seed(args.seed, cc.seed)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileFormatError(f"cannot create {out}: {exc}") from exc
    rec.argv_outputs[str(args.out_dir)] = str(out.resolve())
    result = P.compare(cc, rays, seed, _workers(args), include_uniform=args.uniform)
    export_field_map(result.field, out / "field.fmp")
    rec.add_output(out / "field.fmp")
    field_sha = sha256_file(out / "field.fmp")
    rows = []
    for row in result.rows:
        grid_sha = ""
        if row.label in result.traces:
            write_vgd(result.traces[row.label].grid, out / f"{row.label}.vgd")
            rec.add_output(out / f"{row.label}.vgd")
            grid_sha = sha256_file(out / f"{row.label}.vgd")
        rows.append(_report_row(row, grid_sha256=grid_sha, field_sha256=field_sha))
        for name, (image, u, v, units) in P.projections(row, result.field, AXES["y"]).items():
            path = out / f"{row.label}_{name}_xz.csv"
            write_projection_csv(path, image, u, v, AXES["y"], name, units)
            rec.add_output(path)
    _write_csv(out / "report.csv", f"{REPORT_SCHEMA} units={DELTA_UNITS}; ratio relative to butt",
               REPORT_COLUMNS, rows)
    rec.add_output(out / "report.csv")
    rec.summary = {"freq_ghz": result.field.freq_ghz, "ceiling_mm": result.cavity_spec.ceiling_mm,
                   "meter_detector_fraction": result.meter_detector_fraction,
                   "rows": {r["label"]: {k: r[k] for k in ("delta_T2W", "ratio", "correction_factor")}
                            for r in rows}}
    for r in rows:
        print(f"{r['label']:10s} delta {_fmt(r['delta_T2W'])}  ratio {_fmt(r['ratio'])}"
              f"  correction {_fmt(r['correction_factor'])}")
    rec.write(_manifest_path(args, out / "manifest.json"))
    return 0


def _sweep_values(args):
    if args.values:
        try:
            vals = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise InvalidArgumentError(f"bad --values {args.values!r}") from None
    elif None not in (args.start, args.stop, args.steps):
        vals = list(np.linspace(args.start, args.stop, parse_count(args.steps)))
    else:
        raise InvalidArgumentError("give --values or all of --start/--stop/--steps")
    if not vals:
        raise InvalidArgumentError("sweep needs at least one value")
    return vals


def cmd_sweep(args, rec: RunRecord) -> int:
    if args.param not in P.SWEEPABLE:
        raise InvalidArgumentError(f"cannot sweep {args.param!r}; choose from {sorted(P.SWEEPABLE)}")
    values = _sweep_values(args)
    cfg, doc = load_optical(args.config)
    rec.add_document(args.config, doc)
    fmap = None
    if args.field:
        fmap = import_field_map(args.field)
        rec.add_binary(args.field, args.field)
    elif args.cavity:
        cav, cdoc = load_cavity(args.cavity)
        rec.add_document(args.cavity, cdoc, "cavity")
        _, fmap = P.solve_mode(cav)
    constants = _constants(args, rec)
    rays = parse_count(args.rays) if args.rays is not None else None
    seed = rec.seed = resolve_seed(args.seed, cfg.trace.seed)
    points = P.sweep(cfg, args.param, values, seed, rays, _workers(args), fmap, args.placement_offset_mm,
                     constants, args.pump_power_W)
    rows = [{"index": p.index, "parameter": args.param, "value": p.value, "seed": p.seed,
             "absorbed_fraction": p.absorbed_fraction, "escaped_fraction": p.escaped_fraction,
             "mean_absorption_depth_mm": p.mean_depth_mm, "delta_T2W": p.delta, "gamma": p.gamma}
            for p in points]
    _write_csv(args.out, f"{SWEEP_SCHEMA} parameter={args.param} ({P.SWEEPABLE[args.param]}) "
               f"master_seed={seed} delta_units={DELTA_UNITS}", SWEEP_COLUMNS, rows)
    rec.add_output(args.out, args.out)
    rec.summary = {"points": len(rows)}
    for r in rows:
        print(f"{args.param}={_fmt(r['value'])}  absorbed {_fmt(r['absorbed_fraction'])}"
              f"  depth {_fmt(r['mean_absorption_depth_mm'])}  delta {_fmt(r['delta_T2W'])}")
    rec.write(_manifest_path(args, Path(args.out + ".manifest.json")))
    return 0


def cmd_inspect(args, rec: RunRecord) -> int:
    for path in args.files:
        h = inspect_file(path)
        h["sha256"] = sha256_file(path)
        print(json.dumps({"file": str(path), **h}, sort_keys=True))
    return 0


def _mirror(root: Path, path: str) -> Path:
    return root / "inputs" / Path(path).relative_to(Path(path).anchor)


def cmd_replay(args, rec: RunRecord) -> int:
    """Rerun a manifest's command from its recorded inputs and compare output digests."""
    try:
        man = json.loads(Path(args.manifest_file).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"cannot read manifest {args.manifest_file}: {exc}") from exc
    if man.get("schema") != MANIFEST_SCHEMA:
        raise FileFormatError(f"{args.manifest_file}: not a {MANIFEST_SCHEMA} manifest")
    work = Path(args.out_dir) if args.out_dir else Path(tempfile.mkdtemp(prefix="pumpmap-replay-"))
    work.mkdir(parents=True, exist_ok=True)
    for path, info in man["inputs"].items():
        if info["text"] is None:
            if not Path(path).is_file() or sha256_file(path) != info["sha256"]:
                raise FileFormatError(f"binary input {path} is missing or changed since the run")
            continue
        target = _mirror(work, path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(info["text"], encoding="utf-8")
    argv = []
    old = man["argv"]
    skip = False
    for i, tok in enumerate(old):
        if skip:
            skip = False
            continue
        if tok in ("--seed", "--manifest"):
            skip = True
            continue
        if tok in man["argv_inputs"]:
            p = man["argv_inputs"][tok]
            argv.append(str(_mirror(work, p)) if man["inputs"].get(p, {}).get("text") is not None else p)
        elif tok in man["argv_outputs"]:
            p = Path(man["argv_outputs"][tok])
            argv.append(str(work / "outputs") if man["command"] == "compare" and i > 0 and old[i - 1] == "--out-dir"
                        else str(work / "outputs" / p.name))
        else:
            argv.append(tok)
    (work / "outputs").mkdir(exist_ok=True)
    if man.get("seed") is not None:
        argv += ["--seed", str(man["seed"])]
    new_manifest = work / "replay.manifest.json"
    argv += ["--manifest", str(new_manifest)]
    code = main(argv)
    if code != 0:
        return code
    fresh = json.loads(new_manifest.read_text(encoding="utf-8"))["outputs"]
    ok = True
    for name, info in sorted(man["outputs"].items()):
        got = fresh.get(name, {}).get("sha256")
        status = "match" if got == info["sha256"] else "MISMATCH"
        ok &= got == info["sha256"]
        print(f"{status:9s} {name}")
    print(f"replay outputs in {work / 'outputs'}")
    return 0 if ok else 5


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pumpmap", description="Optical pump / microwave mode overlap toolkit.")
    ap.add_argument("--version", action="version", version=f"pumpmap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, workers=True):
        if seed:
            p.add_argument("--seed", type=int, help=f"master seed (fallback: config, then ${SEED_ENV}, then 0)")
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="tracer threads; results are bit-identical for a fixed count (default 1)")
        p.add_argument("--manifest", help="manifest path (default: next to the output)")

    p = sub.add_parser("trace", help="trace one optical geometry into a VGD1 grid")
    p.add_argument("--config", required=True)
    p.add_argument("--rays", help="ray count, e.g. 1e7 (default: config)")
    p.add_argument("--pitch", type=float, help="voxel pitch in mm (default: config)")
    p.add_argument("--out", required=True)
    p.add_argument("--project", choices=sorted(AXES), help="also write a CSV projection summed along this axis")
    p.add_argument("--project-out")
    common(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("mode", help="solve the cavity TE0 mode into an FMP1 field map")
    p.add_argument("--config", required=True)
    p.add_argument("--target-ghz", type=float)
    p.add_argument("--pitch", type=float, help="mesh pitch in mm")
    p.add_argument("--tune", choices=("on", "off"), help="bisect the ceiling onto the target (default: config)")
    p.add_argument("--out", required=True)
    common(p, seed=False, workers=False)
    p.set_defaults(func=cmd_mode)

    p = sub.add_parser("overlap", help="overlap factor of a grid with a field map")
    p.add_argument("--grid", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--region", default=P.REGION)
    p.add_argument("--placement-offset-mm", type=float, default=0.0,
                   help="crystal centre relative to the field's z = 0 plane")
    p.add_argument("--no-align", action="store_true", help="use the grid coordinates as they are")
    p.add_argument("--constants", help="YAML with spin-system constants for the cooperativity")
    p.add_argument("--pump-power-W", type=float, default=1.0)
    p.add_argument("--q0", type=float, default=6000.0)
    p.add_argument("--out", required=True)
    common(p, seed=False, workers=False)
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("compare", help="butt-coupled versus invasive (and uniform) pumping")
    p.add_argument("--config", required=True)
    p.add_argument("--rays")
    p.add_argument("--uniform", action="store_true", help="add the uniform-pumping row")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="trace one parameter over a range")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help=", ".join(sorted(P.SWEEPABLE)))
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--steps")
    p.add_argument("--field", help="FMP1 field map for the delta column")
    p.add_argument("--cavity", help="cavity config solved for the delta column")
    p.add_argument("--placement-offset-mm", type=float, default=0.0)
    p.add_argument("--constants")
    p.add_argument("--pump-power-W", type=float, default=1.0)
    p.add_argument("--rays")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="print VGD1/FMP1 headers")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("replay", help="rerun a manifest and check output digests")
    p.add_argument("manifest_file")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    rec = RunRecord(args.command, argv)
    try:
        return args.func(args, rec)
    except PumpmapError as exc:
        print(f"pumpmap: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pumpmap: error: {exc}", file=sys.stderr)
        return FileFormatError.exit_code


def entry_point():
    sys.exit(main())
