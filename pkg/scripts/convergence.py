"""Error against element count for the tanh problem, one curve per variant.

    python scripts/convergence.py --n 400,800,1600,3200 --out out/convergence
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from anisoadapt.driver import convergence_study, write_study_csv  # noqa: E402
from anisoadapt.functional import tanh_problem  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", default="400,800,1600,3200")
    ap.add_argument("--variants", default="hbee-aniso,hessian-aniso,isotropic")
    ap.add_argument("--out", default="out/convergence")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_list = [int(s) for s in args.n.split(",")]

    fig, ax = plt.subplots(figsize=(5, 4))
    for variant in args.variants.split(","):
        rows = convergence_study(tanh_problem(), variant, n_list)
        write_study_csv(out / f"{variant}.csv", rows)
        ne = np.array([r[1] for r in rows], float)
        err = np.array([r[2] for r in rows])
        rate = np.polyfit(np.log(ne), np.log(err), 1)[0]
        print(f"{variant:15s} " + " ".join(f"{e:.4f}" for e in err) + f"  slope {rate:.2f}")
        ax.loglog(ne, err, "o-", label=f"{variant} ({rate:.2f})")
    ref = np.array([min(n_list), max(n_list)], float)
    ax.loglog(ref, 2.5 * (ref / ref[0]) ** -0.5, "k--", lw=0.8, label="N^-1/2")
    ax.set_xlabel("elements")
    ax.set_ylabel("H1 seminorm error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "convergence.png", dpi=150)


if __name__ == "__main__":
    main()
