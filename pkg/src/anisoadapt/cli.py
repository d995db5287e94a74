"""Command line entry point: ``anisoadapt run`` and ``anisoadapt study``.

Exit codes: 0 success, 2 finished with convergence warnings, 1 error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .driver import LoopConfig, adaptive_loop, convergence_study, export_report, write_study_csv
from .fem import SolverConfig
from .functional import PROBLEMS, get_problem
from .metric import VARIANTS

log = logging.getLogger("anisoadapt")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2

# flag name -> LoopConfig field
_FLAG_FIELDS = {
    "target_elements": "target_elements",
    "gs_rtol": "gs_rtol",
    "gs_max_sweeps": "gs_max_sweeps",
    "max_passes": "max_passes",
    "max_adapt_iters": "max_adapt_iters",
    "smoothing": "smoothing",
}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        out = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not out or min(out) < 2:
        raise argparse.ArgumentTypeError("element counts must be >= 2")
    return out


def load_config(path: str | None) -> dict:
    """Read a JSON config; keys are LoopConfig fields plus an optional ``solver`` object
    and the ``problem`` / ``metric`` / ``out`` / ``n`` run options."""
    if not path:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def build_loop_config(file_cfg: dict, args: argparse.Namespace) -> LoopConfig:
    loop_keys = {f.name for f in fields(LoopConfig)}
    solver_keys = {f.name for f in fields(SolverConfig)}
    unknown = set(file_cfg) - loop_keys - {"problem", "metric", "out", "n"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {k: v for k, v in file_cfg.items() if k in loop_keys and k != "solver"}
    solver = dict(file_cfg.get("solver", {}))
    bad = set(solver) - solver_keys
    if bad:
        raise ValueError(f"unknown solver keys: {sorted(bad)}")
    for flag, key in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            kw[key] = val
    return LoopConfig(**kw, solver=SolverConfig(**solver))


def _pick(args, file_cfg, name, default=None):
    val = getattr(args, name, None)
    return val if val is not None else file_cfg.get(name, default)


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anisoadapt", description="Anisotropic adaptive P1 finite elements.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", choices=sorted(PROBLEMS))
        sp.add_argument("--metric", choices=VARIANTS)
        sp.add_argument("--config", help="JSON file with LoopConfig fields")
        sp.add_argument("--gs-rtol", type=float, dest="gs_rtol")
        sp.add_argument("--gs-max-sweeps", type=int, dest="gs_max_sweeps")
        sp.add_argument("--max-passes", type=int, dest="max_passes")
        sp.add_argument("--max-adapt-iters", type=int, dest="max_adapt_iters")
        sp.add_argument("--smoothing", type=_bool, metavar="on|off")
        sp.add_argument("--out", help="output directory")

    run = sub.add_parser("run", help="one adaptive run")
    common(run)
    run.add_argument("--target-elements", type=int, dest="target_elements")
    run.add_argument("--no-timing", action="store_true", help="zero the seconds column for byte-stable output")

    study = sub.add_parser("study", help="convergence study over several element counts")
    common(study)
    study.add_argument("--n", type=_int_list, help="comma separated targets, e.g. 400,800,1600,3200")
    return p


def _run(args, file_cfg) -> int:
    cfg = build_loop_config(file_cfg, args)
    problem = get_problem(_pick(args, file_cfg, "problem", "tanh"))
    variant = _pick(args, file_cfg, "metric", "hbee-aniso")
    res = adaptive_loop(problem, variant, cfg)
    out = _pick(args, file_cfg, "out")
    for rec in res.report.records:
        print(f"iter {rec.iter}: {rec.elements} elements, alpha={rec.alpha:.4g}, "
              f"h1err={rec.h1err:.4g}, ar_max={rec.ar_max:.3g}")
    print(f"stop: {res.report.stop_reason}")
    if out:
        export_report(res, out, include_timing=not args.no_timing)
        print(f"wrote {out}")
    for w in res.report.warnings:
        log.warning(w)
    if res.report.error:
        log.error(res.report.error)
        return EXIT_ERROR
    return EXIT_WARN if res.report.warnings else EXIT_OK


def _study(args, file_cfg) -> int:
    cfg = build_loop_config(file_cfg, args)
    problem = get_problem(_pick(args, file_cfg, "problem", "tanh"))
    if not problem.has_exact_solution:
        raise ValueError("a convergence study needs a problem with an exact solution")
    variant = _pick(args, file_cfg, "metric", "hbee-aniso")
    n_list = _pick(args, file_cfg, "n", [400, 800, 1600, 3200])
    rows = convergence_study(problem, variant, n_list, cfg)
    print("N,elements,h1err")
    for n, ne, e in rows:
        print(f"{n},{ne},{e:.6g}")
    out = _pick(args, file_cfg, "out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_study_csv(Path(out) / "study.csv", rows)
    errs = [e for _, _, e in rows]
    if any(b >= a for a, b in zip(errs, errs[1:])):
        log.warning("error is not strictly decreasing with N")
        return EXIT_WARN
    return EXIT_OK


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; 2 is reserved for convergence warnings here
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = load_config(args.config)
        handler = _run if args.command == "run" else _study
        return handler(args, file_cfg)
    except (OSError, ValueError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
