"""Problems without exact solutions: mesh statistics for hbee-aniso and isotropic runs.

    python scripts/aniso_image.py --n 1250 --out out/aniso_image
"""
import argparse
from pathlib import Path

import numpy as np

from anisoadapt.driver import LoopConfig, adaptive_loop, export_report
from anisoadapt.functional import aniso_problem, image_problem
from anisoadapt.mesh import aspect_ratios


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=1250)
    ap.add_argument("--out", default="out/aniso_image")
    args = ap.parse_args()

    for name, make in (("aniso", aniso_problem), ("image", image_problem)):
        for variant in ("hbee-aniso", "isotropic"):
            res = adaptive_loop(make(), variant, LoopConfig(target_elements=args.n))
            ar = aspect_ratios(res.mesh)
            cx = res.mesh.vertices[res.mesh.triangles].mean(axis=1)[:, 0]
            top = ar >= np.percentile(ar, 95)
            side = np.mean((cx[top] < 0.1) | (cx[top] > 0.9))
            f = res.final
            print(f"{name:6s} {variant:11s} elems={f.elements:5d} ar_max={f.ar_max:6.2f} "
                  f"ar_med={f.ar_med:5.2f} alpha={f.alpha:9.4g} top5%-AR near x=0,1: {side:.2f}")
            export_report(res, Path(args.out) / f"{name}_{variant}")


if __name__ == "__main__":
    main()
