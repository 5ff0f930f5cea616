"""How Delta and the overlap ratio move with ray count, voxel pitch and mesh pitch.

Each study changes one resolution parameter with the others fixed at their
reference values and prints one line per setting.

    python scripts/convergence_study.py --study rays
"""

import argparse
import time
from dataclasses import replace

from pumpmap import pipeline as P
from pumpmap.config import builtin_dir, load_compare


def row(label, res):
    inv, butt = res.row("invasive"), res.row("butt")
    print(f"{label:>14s}  butt {butt.delta:.5g}  invasive {inv.delta:.5g}  ratio {inv.ratio:.4f}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--study", choices=("rays", "pitch", "mesh", "all"), default="all")
    ap.add_argument("--rays", type=float, default=1e6, help="rays for the pitch and mesh studies")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)

    cc, _ = load_compare(builtin_dir() / "compare.yaml")
    cc = replace(cc, meter=None)
    spec, fmap = P.solve_mode(cc.cavity)
    base = int(args.rays)

    if args.study in ("rays", "all"):
        print("ray count (pitch 0.1 mm, mesh 0.25 mm)")
        for n in (10 ** 4, 10 ** 5, 10 ** 6):
            t0 = time.perf_counter()
            res = P.compare(cc, rays=n, seed=args.seed, fmap=fmap, cavity_spec=spec, include_uniform=False)
            row(f"{n:.0e} ({time.perf_counter() - t0:.0f}s)", res)
    if args.study in ("pitch", "all"):
        print(f"voxel pitch ({base:.0e} rays, mesh 0.25 mm)")
        for pitch in (0.4, 0.2, 0.1):
            res = P.compare(cc, rays=base, seed=args.seed, fmap=fmap, cavity_spec=spec,
                            include_uniform=False, pitch=pitch)
            row(f"{pitch} mm", res)
    if args.study in ("mesh", "all"):
        print(f"field mesh pitch ({base:.0e} rays, voxel pitch 0.1 mm)")
        for mesh in (0.5, 0.25, 0.125):
            try:
                s, f = P.solve_mode(cc.cavity, pitch=mesh)
            except Exception as exc:  # coarse meshes may not resolve the ring
                print(f"{mesh:>11} mm  {exc}")
                continue
            res = P.compare(cc, rays=base, seed=args.seed, fmap=f, cavity_spec=s, include_uniform=False)
            row(f"{mesh} mm", res)
            print(f"{'':>14s}  {f.freq_ghz:.6f} GHz, ceiling {s.ceiling_mm:.4f} mm")


if __name__ == "__main__":
    main()
