import csv
import math
import re

import numpy as np
import pytest

from anisoadapt.driver import (
    CSV_HEADER,
    LoopConfig,
    adaptive_loop,
    convergence_study,
    export_report,
    write_study_csv,
)
from anisoadapt.functional import aniso_problem, linear_patch_problem, tanh_problem
from anisoadapt.mesh_io import read_vtk


@pytest.fixture(scope="module")
def small_run():
    return adaptive_loop(tanh_problem(), "hbee-aniso", LoopConfig(target_elements=300, max_adapt_iters=4))


def test_header_contract():
    assert CSV_HEADER == ["iter", "vertices", "elements", "alpha", "sigma", "h1err", "ar_max", "ar_med",
                          "gs_sweeps", "seconds"]


def test_records_and_sigma(small_run):
    recs = small_run.report.records
    assert [r.iter for r in recs] == list(range(len(recs)))
    assert all(r.elements > 0 and r.vertices > 0 for r in recs)
    for r in recs:
        assert r.sigma == pytest.approx(2.0, rel=1e-8)
        assert math.isfinite(r.h1err) and r.gs_sweeps >= 1
    assert small_run.report.stop_reason


def test_unknown_variant():
    with pytest.raises(ValueError):
        adaptive_loop(tanh_problem(), "bogus")


def test_degenerate_patch_exits_after_first_iteration():
    res = adaptive_loop(linear_patch_problem(1.0, 1.0, 0.0), "hbee-aniso", LoopConfig(target_elements=200))
    assert len(res.report.records) == 1
    rec = res.final
    assert rec.degenerate and rec.alpha == math.inf
    assert rec.h1err < 1e-10
    assert res.metric.degenerate
    np.testing.assert_array_equal(res.metric.tensors, np.broadcast_to(np.eye(2), res.metric.tensors.shape))
    assert "degenerate" in res.report.stop_reason


def test_no_exact_solution_records_nan():
    res = adaptive_loop(aniso_problem(), "isotropic", LoopConfig(target_elements=200, max_adapt_iters=2))
    assert all(math.isnan(r.h1err) for r in res.report.records)
    assert res.report.warnings  # two iterations cannot meet the change rule


def test_export_files(small_run, tmp_path):
    paths = export_report(small_run, tmp_path)
    for p in paths.values():
        assert p.exists() and p.stat().st_size > 0
    with open(paths["report"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 1 + len(small_run.report.records)
    svg = paths["svg"].read_text()
    assert len(re.findall(r"<polygon", svg)) == small_run.mesh.n_triangles
    mesh, data = read_vtk(paths["mesh"])
    assert mesh.n_triangles == small_run.mesh.n_triangles
    mesh2, data2 = read_vtk(paths["metric"])
    assert mesh2.n_triangles == small_run.mesh.n_triangles


def test_export_deterministic(tmp_path):
    cfg = LoopConfig(target_elements=250, max_adapt_iters=3)
    a = export_report(adaptive_loop(tanh_problem(), "hbee-aniso", cfg), tmp_path / "a", include_timing=False)
    b = export_report(adaptive_loop(tanh_problem(), "hbee-aniso", cfg), tmp_path / "b", include_timing=False)
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()


def test_study_rows_sorted_and_repeatable(tmp_path):
    cfg = LoopConfig(max_adapt_iters=2)
    rows = convergence_study(tanh_problem(), "isotropic", [300, 200], cfg)
    assert [r[0] for r in rows] == [200, 300]
    assert rows == convergence_study(tanh_problem(), "isotropic", [200, 300], cfg)
    write_study_csv(tmp_path / "s.csv", rows)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "N,elements,h1err" and len(lines) == 3
