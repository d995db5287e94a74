"""Tanh layer problem: the four metric variants at one element target.

    python scripts/tanh_variants.py --n 1250 --out out/tanh
"""
import argparse
import logging
from pathlib import Path

from anisoadapt.driver import LoopConfig, adaptive_loop, export_report
from anisoadapt.functional import tanh_problem
from anisoadapt.metric import VARIANTS


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=1250, help="target element count")
    ap.add_argument("--out", default="out/tanh")
    ap.add_argument("--variants", default=",".join(VARIANTS))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    print(f"{'variant':15s} {'iters':>5s} {'verts':>6s} {'elems':>6s} {'h1err':>8s} {'ar_max':>7s} {'alpha':>9s}")
    for variant in args.variants.split(","):
        res = adaptive_loop(tanh_problem(), variant, LoopConfig(target_elements=args.n))
        f = res.final
        print(f"{variant:15s} {len(res.report.records):5d} {f.vertices:6d} {f.elements:6d} "
              f"{f.h1err:8.4f} {f.ar_max:7.2f} {f.alpha:9.4g}")
        export_report(res, Path(args.out) / variant)


if __name__ == "__main__":
    main()
