"""Mesh file formats: Triangle ``.node``/``.ele``, legacy VTK, and SVG.

Node file::

    <n_vertices> 2 0 1
    <id> <x> <y> <boundary marker>

Element file::

    <n_triangles> 3 0
    <id> <v1> <v2> <v3>

Indices are 1-based. ``#`` starts a comment.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import MeshError, TriMesh, build_mesh


class MeshFormatError(MeshError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _base(path) -> Path:
    p = Path(path)
    if p.suffix in (".node", ".ele"):
        return p.with_suffix("")
    return p


def _records(path: Path):
    """Yield (line number, tokens) for non-blank, non-comment lines."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _read_table(path: Path, min_cols: int):
    recs = list(_records(path))
    if not recs:
        raise MeshFormatError(path, 1, "empty file")
    lineno, header = recs[0]
    try:
        count = int(header[0])
    except (ValueError, IndexError):
        raise MeshFormatError(path, lineno, "bad header") from None
    body = recs[1:]
    if len(body) != count:
        raise MeshFormatError(
            path, body[-1][0] if body else lineno, f"header says {count} records, found {len(body)}"
        )
    for ln, toks in body:
        if len(toks) < min_cols:
            raise MeshFormatError(path, ln, f"expected at least {min_cols} columns")
    return header, body


def write_mesh(path, mesh: TriMesh) -> None:
    """Write ``<path>.node`` and ``<path>.ele``."""
    base = _base(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    bmark = mesh.boundary_vertex.astype(int)
    with open(base.with_suffix(".node"), "w") as fh:
        fh.write(f"{mesh.n_vertices} 2 0 1\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i + 1} {float(x)!r} {float(y)!r} {bmark[i]}\n")
    with open(base.with_suffix(".ele"), "w") as fh:
        fh.write(f"{mesh.n_triangles} 3 0\n")
        for k, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{k + 1} {a + 1} {b + 1} {c + 1}\n")


def read_mesh(path) -> TriMesh:
    base = _base(path)
    node_path, ele_path = base.with_suffix(".node"), base.with_suffix(".ele")

    _, body = _read_table(node_path, 3)
    verts = np.empty((len(body), 2))
    for i, (ln, toks) in enumerate(body):
        try:
            vid = int(toks[0])
            verts[i] = float(toks[1]), float(toks[2])
        except ValueError:
            raise MeshFormatError(node_path, ln, "unparseable vertex record") from None
        if vid != i + 1:
            raise MeshFormatError(node_path, ln, f"expected vertex id {i + 1}")

    _, body = _read_table(ele_path, 4)
    tris = np.empty((len(body), 3), dtype=np.int64)
    nv = len(verts)
    for k, (ln, toks) in enumerate(body):
        try:
            idx = [int(t) for t in toks[1:4]]
        except ValueError:
            raise MeshFormatError(ele_path, ln, "unparseable triangle record") from None
        for v in idx:
            if not 1 <= v <= nv:
                raise MeshFormatError(ele_path, ln, f"vertex index {v} out of range 1..{nv}")
        tris[k] = [v - 1 for v in idx]
    return build_mesh(verts, tris)


def write_vtk(path, mesh: TriMesh, cell_scalars=None, cell_tensors=None, point_scalars=None,
              title="anisoadapt mesh") -> None:
    """Legacy ASCII VTK unstructured grid (cell type 5).

    ``cell_tensors`` maps names to (nt, 2, 2) arrays, written as 3x3 tensors.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.vertices]
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if cell_scalars or cell_tensors:
        lines.append(f"CELL_DATA {nt}")
        for name, vals in (cell_scalars or {}).items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in np.asarray(vals)]
        for name, T in (cell_tensors or {}).items():
            lines.append(f"TENSORS {name} double")
            for M in np.asarray(T, dtype=float).tolist():
                lines.append(f"{M[0][0]!r} {M[0][1]!r} 0.0")
                lines.append(f"{M[1][0]!r} {M[1][1]!r} 0.0")
                lines.append("0.0 0.0 0.0")
    if point_scalars:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in point_scalars.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in np.asarray(vals)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path):
    """Parse files written by :func:`write_vtk`.

    Returns ``(mesh, cell_data)`` where ``cell_data`` maps names to arrays.
    """
    toks = Path(path).read_text().split("\n")
    if not toks or not toks[0].startswith("# vtk DataFile"):
        raise MeshFormatError(path, 1, "not a legacy VTK file")
    it = iter(enumerate(toks[4:], start=5))
    verts, tris, data = None, None, {}
    n_cells_data = None
    for ln, line in it:
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            verts = np.array([[float(v) for v in next(it)[1].split()[:2]] for _ in range(n)])
        elif key == "CELLS":
            n = int(parts[1])
            rows = [next(it)[1].split() for _ in range(n)]
            if any(r[0] != "3" for r in rows):
                raise MeshFormatError(path, ln, "only triangles supported")
            tris = np.array([[int(v) for v in r[1:4]] for r in rows])
        elif key == "CELL_TYPES":
            n = int(parts[1])
            types = {next(it)[1].strip() for _ in range(n)}
            if types != {"5"}:
                raise MeshFormatError(path, ln, "unexpected cell type")
        elif key == "CELL_DATA":
            n_cells_data = int(parts[1])
        elif key == "POINT_DATA":
            n_cells_data = int(parts[1])
        elif key == "SCALARS":
            next(it)  # lookup table
            data[parts[1]] = np.array([float(next(it)[1]) for _ in range(n_cells_data)])
        elif key == "TENSORS":
            vals = []
            for _ in range(n_cells_data):
                rows = [[float(v) for v in next(it)[1].split()] for _ in range(3)]
                vals.append(np.array(rows)[:2, :2])
            data[parts[1]] = np.array(vals)
        else:
            raise MeshFormatError(path, ln, f"unexpected section {key!r}")
    if verts is None or tris is None:
        raise MeshFormatError(path, len(toks), "missing POINTS or CELLS")
    return build_mesh(verts, tris), data


def write_svg(path, mesh: TriMesh, cell_values=None, size=800, stroke_width=0.5) -> None:
    """Wireframe SVG with optional per-element colouring (one polygon per element)."""
    V = mesh.vertices
    lo = V.min(axis=0)
    span = float(np.max(V.max(axis=0) - lo)) or 1.0
    scale = size / span

    def xy(p):
        # flip y so the picture has the usual orientation
        return f"{(p[0] - lo[0]) * scale:.3f},{size - (p[1] - lo[1]) * scale:.3f}"

    colors = ["#ffffff"] * mesh.n_triangles
    if cell_values is not None:
        v = np.asarray(cell_values, dtype=float)
        vmin, vmax = float(v.min()), float(v.max())
        t = (v - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(v)
        colors = [_ramp(ti) for ti in t]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
    ]
    for k, tri in enumerate(mesh.triangles):
        pts = " ".join(xy(V[i]) for i in tri)
        out.append(
            f'<polygon points="{pts}" fill="{colors[k]}" stroke="black" '
            f'stroke-width="{stroke_width}"/>'
        )
    out.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(out) + "\n")


def _ramp(t: float) -> str:
    # blue -> white -> red
    if t < 0.5:
        s = 2 * t
        r, g, b = s, s, 1.0
    else:
        s = 2 * (1 - t)
        r, g, b = 1.0, s, s
    return "#{:02x}{:02x}{:02x}".format(int(255 * r), int(255 * g), int(255 * b))
