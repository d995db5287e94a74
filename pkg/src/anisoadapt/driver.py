"""The adaptive loop: solve, estimate, build the metric, remesh, repeat."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adapt import AdaptConfig, MetricInterpolator, adapt_mesh
from .estimator import hbee, indicators
from .fem import NewtonError, SolverConfig, h1_seminorm_error, newton_solve
from .functional import ProblemInstance
from .mesh import TriMesh, aspect_ratios, crisscross_for_target
from .mesh_io import write_svg, write_vtk
from .metric import VARIANTS, MetricField, metric_tensor

log = logging.getLogger(__name__)

CSV_HEADER = ["iter", "vertices", "elements", "alpha", "sigma", "h1err", "ar_max", "ar_med",
              "gs_sweeps", "seconds"]


@dataclass
class LoopConfig:
    target_elements: int = 1250
    max_adapt_iters: int = 10
    min_adapt_iters: int = 3
    change_tol: float = 0.05
    gs_rtol: float = 0.01
    gs_max_sweeps: int = 20
    max_passes: int = 12
    smoothing: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(target_elements=self.target_elements, max_passes=self.max_passes,
                           smoothing=self.smoothing)


@dataclass
class IterationRecord:
    iter: int
    vertices: int
    elements: int
    alpha: float
    sigma: float
    h1err: float
    ar_max: float
    ar_med: float
    gs_sweeps: int
    seconds: float
    degenerate: bool = False

    def row(self) -> list:
        return [getattr(self, k) for k in CSV_HEADER]


@dataclass
class AdaptReport:
    problem: str
    variant: str
    records: list = field(default_factory=list)
    stop_reason: str = ""
    warnings: list = field(default_factory=list)
    error: str | None = None


@dataclass
class LoopResult:
    report: AdaptReport
    mesh: TriMesh
    u: np.ndarray
    metric: MetricField | None

    @property
    def final(self) -> IterationRecord:
        return self.report.records[-1]


def _changed(new: float, old: float, tol: float) -> bool:
    if not (math.isfinite(new) and math.isfinite(old)):
        return new != old
    return abs(new - old) > tol * max(abs(old), 1e-300)


def adaptive_loop(problem: ProblemInstance, variant: str = "hbee-aniso",
                  config: LoopConfig | None = None, initial_mesh: TriMesh | None = None,
                  on_iteration=None) -> LoopResult:
    """Run the solve-estimate-metric-remesh cycle.

    Stops after ``max_adapt_iters`` solves or once the element count and the
    error (``alpha_h`` when no exact solution is known) change by less than
    ``change_tol`` between consecutive iterations. ``on_iteration(rec, mesh,
    u, metric)`` is called after each record is made.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown metric variant {variant!r}")
    cfg = config or LoopConfig()
    functional = problem.functional
    report = AdaptReport(problem=problem.label, variant=variant)
    mesh = initial_mesh or crisscross_for_target(cfg.target_elements)
    u = None
    metric = None
    for it in range(cfg.max_adapt_iters):
        t0 = time.perf_counter()
        try:
            sol = newton_solve(mesh, functional, cfg.solver)
        except NewtonError as exc:
            report.error = f"iteration {it}: {exc}"
            report.stop_reason = "error"
            break
        u = sol.u
        z = None
        if variant in ("hbee-aniso", "hbee-only"):
            z = hbee(mesh, functional, u, rtol=cfg.gs_rtol, max_sweeps=cfg.gs_max_sweeps)
        ind = indicators(mesh, functional, u)
        metric = metric_tensor(mesh, functional, u, z, variant, ind=ind)
        err = (h1_seminorm_error(mesh, u, functional.exact_gradient)
               if functional.exact_gradient is not None else math.nan)
        ar = aspect_ratios(mesh)
        rec = IterationRecord(
            iter=it, vertices=mesh.n_vertices, elements=mesh.n_triangles, alpha=metric.alpha,
            sigma=metric.sigma, h1err=err, ar_max=float(ar.max()), ar_med=float(np.median(ar)),
            gs_sweeps=z.sweeps if z is not None else 0, seconds=0.0, degenerate=metric.degenerate,
        )
        report.records.append(rec)
        if on_iteration is not None:
            on_iteration(rec, mesh, u, metric)
        if metric.degenerate:
            rec.seconds = time.perf_counter() - t0
            report.stop_reason = "degenerate metric: nothing to adapt"
            break
        if it >= 1 and it + 1 >= cfg.min_adapt_iters:
            prev = report.records[-2]
            second = (rec.h1err, prev.h1err) if math.isfinite(rec.h1err) else (rec.alpha, prev.alpha)
            if not _changed(rec.elements, prev.elements, cfg.change_tol) and not _changed(
                *second, cfg.change_tol
            ):
                rec.seconds = time.perf_counter() - t0
                report.stop_reason = f"converged: changes below {cfg.change_tol:.0%}"
                break
        if it == cfg.max_adapt_iters - 1:
            rec.seconds = time.perf_counter() - t0
            report.stop_reason = "max_adapt_iters reached"
            report.warnings.append(f"no convergence within {cfg.max_adapt_iters} adaptive iterations")
            break
        acfg = cfg.adapt_config()
        new_mesh = adapt_mesh(mesh, metric, acfg)
        if abs(new_mesh.n_triangles / acfg.target_elements - 1) > acfg.count_tolerance:
            report.warnings.append(f"iteration {it}: remesher produced {new_mesh.n_triangles} elements")
        mesh = new_mesh
        rec.seconds = time.perf_counter() - t0
    return LoopResult(report=report, mesh=mesh, u=u, metric=metric)


def convergence_study(problem: ProblemInstance, variant: str, n_list, config: LoopConfig | None = None):
    """One adaptive run per target element count; rows ``(N, elements, error)`` sorted by N."""
    base = config or LoopConfig()
    rows = []
    for n in sorted(n_list):
        cfg = LoopConfig(**{**asdict(base), "target_elements": int(n), "solver": base.solver})
        res = adaptive_loop(problem, variant, cfg)
        rows.append((int(n), res.final.elements, res.final.h1err))
    return rows


def write_study_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "elements", "h1err"])
        for n, ne, e in rows:
            w.writerow([n, ne, repr(float(e))])


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def export_report(result: LoopResult, outdir, include_timing: bool = True) -> dict:
    """Write report.csv, mesh_final.vtk, mesh_final.svg and metric_final.vtk.

    With ``include_timing=False`` the seconds column is zeroed so that the
    files are byte-identical across identical runs.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.csv",
        "mesh": out / "mesh_final.vtk",
        "svg": out / "mesh_final.svg",
        "metric": out / "metric_final.vtk",
    }
    with open(paths["report"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in result.report.records:
            row = rec.row()
            if not include_timing:
                row[-1] = 0.0
            w.writerow([_fmt(v) for v in row])
    mesh = result.mesh
    ar = aspect_ratios(mesh)
    write_vtk(paths["mesh"], mesh, cell_scalars={"aspect_ratio": ar},
              point_scalars={"u_h": result.u} if result.u is not None and len(result.u) == mesh.n_vertices else None)
    write_svg(paths["svg"], mesh, cell_values=np.log(ar))
    if result.metric is not None and len(result.metric.tensors) == mesh.n_triangles:
        tensors, rho = result.metric.tensors, result.metric.rho
    else:
        tensors, rho = np.broadcast_to(np.eye(2), (mesh.n_triangles, 2, 2)), np.ones(mesh.n_triangles)
    write_vtk(paths["metric"], mesh, cell_scalars={"rho": rho}, cell_tensors={"metric": tensors})
    return paths
