"""Conforming 2D triangle meshes with edge topology and element geometry.

Element shape statistics are measured relative to the unit-area equilateral
reference triangle, so an element's Jacobian has ``|det F'| = |K|``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh input."""


_REF_SIDE = np.sqrt(4.0 / np.sqrt(3.0))

#: Vertices of the unit-area equilateral reference triangle, centroid at the origin.
REF_VERTICES = np.array(
    [[0.0, 0.0], [_REF_SIDE, 0.0], [0.5 * _REF_SIDE, 0.5 * np.sqrt(3.0) * _REF_SIDE]]
)
REF_VERTICES -= REF_VERTICES.mean(axis=0)

#: Edge length of the reference triangle.
REF_EDGE_LENGTH = float(_REF_SIDE)

_REF_EDGES = np.column_stack([REF_VERTICES[1] - REF_VERTICES[0], REF_VERTICES[2] - REF_VERTICES[0]])
_REF_EDGES_INV = np.linalg.inv(_REF_EDGES)


@dataclass(frozen=True)
class ElementGeometry:
    area: float
    jacobian: np.ndarray  # 2x2, maps reference edge vectors to physical ones
    edge_vectors: np.ndarray  # (3, 2), side i is opposite local vertex i
    normals: np.ndarray  # (3, 2) outward unit normals


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable conforming triangulation.

    Use :func:`build_mesh` to construct one; it derives the edge list and
    adjacency and checks conformity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    edges : (ne, 2) int array, sorted pairs in lexicographic order
    edge_triangles : (ne, 2) int array, incident triangles (-1 if absent)
    triangle_edges : (nt, 3) int array, ``triangle_edges[k, i]`` is the edge
        opposite local vertex ``i``
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_triangles: np.ndarray
    triangle_edges: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edge(self) -> np.ndarray:
        return self.edge_triangles[:, 1] < 0

    @cached_property
    def boundary_vertex(self) -> np.ndarray:
        mark = np.zeros(self.n_vertices, dtype=bool)
        mark[self.edges[self.boundary_edge].ravel()] = True
        return mark

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_edge)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nt, 2, 2) affine maps from the reference triangle."""
        p = self.vertices[self.triangles]
        D = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return D @ _REF_EDGES_INV

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the barycentric coordinates."""
        p = self.vertices[self.triangles]
        # grad(lambda_i) = rot90(edge opposite i) / (2|K|), pointing inward
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        grads = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        return grads / (2.0 * self.areas[:, None, None])

    @cached_property
    def vertex_neighbors(self) -> list[np.ndarray]:
        """Edge-connected neighbours of every vertex, sorted."""
        nbrs: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        return [np.array(sorted(n), dtype=int) for n in nbrs]

    def element_geometry(self, K: int) -> ElementGeometry:
        return element_geometry(self, K)


def build_mesh(vertices, triangles) -> TriMesh:
    """Validate input, orient triangles counter-clockwise and derive edges."""
    V = np.array(vertices, dtype=float)
    T = np.array(triangles, dtype=np.int64)
    if V.ndim != 2 or V.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    if T.ndim != 2 or T.shape[1] != 3 or len(T) == 0:
        raise MeshError("need at least one triangle given as vertex-index triples")
    if T.min() < 0 or T.max() >= len(V):
        raise MeshError("triangle vertex index out of range")
    if np.any((T[:, 0] == T[:, 1]) | (T[:, 1] == T[:, 2]) | (T[:, 0] == T[:, 2])):
        raise MeshError("triangle with repeated vertex")

    p = V[T]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    scale = np.maximum(np.sum(d1**2, axis=1), np.sum(d2**2, axis=1))
    flat = np.abs(signed) <= 1e-14 * scale
    if np.any(flat):
        raise MeshError(f"zero-area triangle {int(np.flatnonzero(flat)[0])}")
    cw = signed < 0
    T = T.copy()
    T[cw, 1], T[cw, 2] = T[cw, 2], T[cw, 1].copy()

    keys = np.sort(T, axis=1)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise MeshError("duplicate triangle")

    # side i of triangle k is opposite local vertex i
    sides = np.stack([T[:, [1, 2]], T[:, [2, 0]], T[:, [0, 1]]], axis=1).reshape(-1, 2)
    sides = np.sort(sides, axis=1)
    edges, inverse, counts = np.unique(sides, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = edges[np.flatnonzero(counts > 2)[0]]
        raise MeshError(f"non-manifold edge ({bad[0]}, {bad[1]})")

    nt = len(T)
    tri_of_side = np.repeat(np.arange(nt), 3)
    edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    edge_tris[inverse[order][first], 0] = tri_of_side[order][first]
    edge_tris[inverse[order][~first], 1] = tri_of_side[order][~first]

    return TriMesh(
        vertices=V,
        triangles=T,
        edges=edges.astype(np.int64),
        edge_triangles=edge_tris,
        triangle_edges=inverse.reshape(nt, 3).astype(np.int64),
    )


def element_geometry(mesh: TriMesh, K: int) -> ElementGeometry:
    p = mesh.vertices[mesh.triangles[K]]
    e = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
    n = np.column_stack([e[:, 1], -e[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    return ElementGeometry(
        area=float(mesh.areas[K]), jacobian=mesh.jacobians[K], edge_vectors=e, normals=n
    )


def aspect_ratios(mesh: TriMesh) -> np.ndarray:
    """Ratio of extreme singular values of every element's Jacobian."""
    sv = np.linalg.svd(mesh.jacobians, compute_uv=False)
    if np.any(sv[:, 1] <= 0):
        raise MeshError("degenerate element")
    return sv[:, 0] / sv[:, 1]


def aspect_ratio(mesh: TriMesh, K: int) -> float:
    sv = np.linalg.svd(mesh.jacobians[K], compute_uv=False)
    if sv[1] <= 0:
        raise MeshError(f"degenerate element {K}")
    return float(sv[0] / sv[1])


def unit_square_crisscross(n: int) -> TriMesh:
    """Uniform n x n grid on the unit square, each cell cut into 4 triangles."""
    if n < 1:
        raise MeshError("need at least one cell")
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    corners = np.column_stack([X.ravel(), Y.ravel()])
    c = (s[:-1] + s[1:]) / 2
    CX, CY = np.meshgrid(c, c, indexing="xy")
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    V = np.vstack([corners, centers])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            m = (n + 1) ** 2 + j * n + i
            tris += [(v00, v10, m), (v10, v11, m), (v11, v01, m), (v01, v00, m)]
    return build_mesh(V, tris)


def crisscross_for_target(n_elements: int) -> TriMesh:
    """Criss-cross mesh with element count closest to ``n_elements``."""
    n = max(1, int(round(np.sqrt(n_elements / 4.0))))
    return unit_square_crisscross(n)


def unit_square_diagonal(n: int) -> TriMesh:
    """n x n grid with every cell split along its (0,0)-(1,1) diagonal."""
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    V = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            tris += [(v00, v10, v11), (v00, v11, v01)]
    return build_mesh(V, tris)
