"""Residuals, flux jumps and the hierarchical basis error estimate.

The error estimate ``z_h`` lives in the span of the quadratic edge bubbles
``4 lambda_a lambda_b`` of interior edges. It solves the linearised error
problem ``delta I[u_h, w] + B[u_h; z_h, w] = 0`` approximately by a few
symmetric Gauss-Seidel sweeps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import GAUSS3, TRI_DEG4, SparseSymSystem, _element_state, _scatter, gradients
from .functional import FunctionalSpec
from .mesh import TriMesh

_NEXT = np.array([1, 2, 0])
_PREV = np.array([2, 0, 1])


@dataclass
class BubbleField:
    """Bubble coefficients indexed by mesh edge; zero on boundary edges."""

    coefficients: np.ndarray
    sweeps: int = 0

    def on_interior(self, mesh: TriMesh) -> np.ndarray:
        return self.coefficients[mesh.interior_edges]


@dataclass
class ElementIndicators:
    residual: np.ndarray  # scaled L2 norm of r_h per element
    jump: np.ndarray  # scaled L2 norm of R_h per edge

    def jump_term(self, mesh: TriMesh) -> np.ndarray:
        """(1/|K|) sum over sides of |gamma| * scaled jump norm."""
        side = self.jump[mesh.triangle_edges] * mesh.edge_lengths[mesh.triangle_edges]
        return side.sum(axis=1) / mesh.areas


def residual_values(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray, rule=TRI_DEG4):
    """r_h = F_u - div F_grad at quadrature points, shape (nt, nq).

    On P1 elements the second-derivative chain term vanishes, leaving the
    u-coupling term ``F_ug . grad u_h`` and any explicit x-divergence.
    """
    _, xq, uq, gq = _element_state(mesh, u_h, rule)
    r = functional.F_u(xq, uq, gq) - np.sum(functional.F_ug(xq, uq, gq) * gq, axis=-1)
    if functional.flux_divergence_x is not None:
        r = r - functional.flux_divergence_x(xq, uq, gq)
    return r


def element_residual(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray, K=None):
    """Scaled residual norm on element ``K`` (all elements if ``K`` is None)."""
    r = residual_values(mesh, functional, u_h)
    out = np.sqrt((r * r) @ TRI_DEG4.weights)
    return out if K is None else float(out[K])


def _edge_normals(mesh: TriMesh) -> np.ndarray:
    """Unit normals of every edge pointing out of its first incident triangle."""
    a, b = mesh.vertices[mesh.edges[:, 0]], mesh.vertices[mesh.edges[:, 1]]
    t = b - a
    n = np.column_stack([t[:, 1], -t[:, 0]]) / mesh.edge_lengths[:, None]
    tri = mesh.triangles[mesh.edge_triangles[:, 0]]
    centroid = mesh.vertices[tri].mean(axis=1)
    flip = np.sum((centroid - a) * n, axis=1) > 0
    n[flip] *= -1
    return n


def edge_jump(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray, gamma=None):
    """Scaled L2 norm of the flux jump on every edge (0 on the boundary)."""
    out = np.zeros(mesh.n_edges)
    ie = mesh.interior_edges
    if len(ie):
        t, w = GAUSS3
        a, b = mesh.edges[ie, 0], mesh.edges[ie, 1]
        xa, xb = mesh.vertices[a], mesh.vertices[b]
        xq = xa[:, None, :] + t[None, :, None] * (xb - xa)[:, None, :]
        uq = u_h[a][:, None] + t[None, :] * (u_h[b] - u_h[a])[:, None]
        g = gradients(mesh, u_h)
        g0 = np.broadcast_to(g[mesh.edge_triangles[ie, 0]][:, None, :], xq.shape)
        g1 = np.broadcast_to(g[mesh.edge_triangles[ie, 1]][:, None, :], xq.shape)
        n = _edge_normals(mesh)[ie]
        # each side contributes with its own outward normal: n and -n
        R = np.sum((functional.F_grad(xq, uq, g0) - functional.F_grad(xq, uq, g1)) * n[:, None, :],
                   axis=-1)
        out[ie] = np.sqrt((R * R) @ w)
    return out if gamma is None else float(out[gamma])


def indicators(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray) -> ElementIndicators:
    return ElementIndicators(
        residual=element_residual(mesh, functional, u_h), jump=edge_jump(mesh, functional, u_h)
    )


def bubble_basis(mesh: TriMesh, rule=TRI_DEG4):
    """Values (nq, 3) and gradients (nt, nq, 3, 2) of the three element bubbles.

    Local bubble ``i`` belongs to the side opposite local vertex ``i``.
    """
    lam = rule.points
    G = mesh.barycentric_gradients
    vals = 4.0 * lam[:, _NEXT] * lam[:, _PREV]
    grads = 4.0 * (
        lam[None, :, _NEXT, None] * G[:, None, _PREV, :] + lam[None, :, _PREV, None] * G[:, None, _NEXT, :]
    )
    return vals, grads


def assemble_error_problem(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray) -> SparseSymSystem:
    """Bubble system ``B[u_h; phi_g', phi_g] z = -delta I[u_h, phi_g]`` on interior edges."""
    rule = TRI_DEG4
    _, xq, uq, gq = _element_state(mesh, u_h, rule)
    phi, dphi = bubble_basis(mesh, rule)
    wA = mesh.areas[:, None] * rule.weights[None, :]

    Fu = functional.F_u(xq, uq, gq)
    Fg = functional.F_grad(xq, uq, gq)
    Fuu = functional.F_uu(xq, uq, gq)
    Fug = functional.F_ug(xq, uq, gq)
    Fgg = functional.F_gg(xq, uq, gq)
    for arr in (Fu, Fg, Fuu, Fug, Fgg):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite integrand in error problem")

    A = np.einsum("kq,kq,qi,qj->kij", wA, Fuu, phi, phi)
    c = np.einsum("kq,kqd,kqjd,qi->kij", wA, Fug, dphi, phi)
    A += c + np.transpose(c, (0, 2, 1))
    A += np.einsum("kq,kqjd,kqde,kqie->kij", wA, dphi, Fgg, dphi)
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    b_loc = np.einsum("kq,kq,qi->ki", wA, Fu, phi) + np.einsum("kq,kqd,kqid->ki", wA, Fg, dphi)

    dofs = mesh.triangle_edges
    full = _scatter(mesh.n_edges, dofs, A)
    rhs = -np.bincount(dofs.ravel(), weights=b_loc.ravel(), minlength=mesh.n_edges)
    ie = mesh.interior_edges
    mat = full[ie][:, ie].tocsr()
    if not np.all(np.isfinite(mat.data)):
        raise FloatingPointError("non-finite entries in error problem")
    return SparseSymSystem(matrix=mat, rhs=rhs[ie])


def sym_gauss_seidel(A, b, x0=None, rtol: float = 0.01, max_sweeps: int = 20):
    """Symmetric Gauss-Seidel: forward sweep then backward sweep.

    Stops when ``||x_new - x_old||_inf / ||x_new||_inf < rtol`` or after
    ``max_sweeps`` symmetric sweeps. Returns ``(x, sweeps)``.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if n == 0:
        return x, 0
    d = A.diagonal()
    if np.any(d == 0):
        raise ValueError("zero diagonal entry in Gauss-Seidel")
    lower = sp.tril(A, k=0, format="csr")
    upper = sp.triu(A, k=0, format="csr")
    strict_lower = sp.tril(A, k=-1, format="csr")
    strict_upper = sp.triu(A, k=1, format="csr")

    sweeps = 0
    while sweeps < max_sweeps:
        old = x
        half = spla.spsolve_triangular(lower, b - strict_upper @ old, lower=True)
        x = spla.spsolve_triangular(upper, b - strict_lower @ half, lower=False)
        sweeps += 1
        change = np.max(np.abs(x - old))
        scale = np.max(np.abs(x))
        if change == 0.0 or (scale > 0 and change / scale < rtol):
            break
    return x, sweeps


def hbee(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray, rtol: float = 0.01,
         max_sweeps: int = 20, exact: bool = False) -> BubbleField:
    """Hierarchical basis error estimate; ``exact=True`` uses a direct solve."""
    system = assemble_error_problem(mesh, functional, u_h)
    coeffs = np.zeros(mesh.n_edges)
    if exact:
        if system.matrix.shape[0]:
            coeffs[mesh.interior_edges] = spla.spsolve(system.matrix.tocsc(), system.rhs)
        return BubbleField(coeffs, sweeps=0)
    z, sweeps = sym_gauss_seidel(system.matrix, system.rhs, rtol=rtol, max_sweeps=max_sweeps)
    coeffs[mesh.interior_edges] = z
    return BubbleField(coeffs, sweeps=sweeps)


def evaluate_bubble(mesh: TriMesh, z: BubbleField, K: int, bary: np.ndarray) -> np.ndarray:
    """z_h at barycentric points ``bary`` (n, 3) of element ``K``."""
    bary = np.atleast_2d(bary)
    c = z.coefficients[mesh.triangle_edges[K]]
    return 4.0 * (bary[:, _NEXT] * bary[:, _PREV]) @ c


def bubble_norms(mesh: TriMesh, z: BubbleField):
    """L2 norms of z_h on elements (nt,) and on edges (ne,)."""
    phi, _ = bubble_basis(mesh)
    c = z.coefficients[mesh.triangle_edges]
    vals = c @ phi.T  # (nt, nq)
    elem = np.sqrt(mesh.areas * ((vals * vals) @ TRI_DEG4.weights))
    # int_0^1 (4 t (1 - t))^2 dt = 8/15
    edge = np.abs(z.coefficients) * np.sqrt(8.0 / 15.0 * mesh.edge_lengths)
    return elem, edge


def error_functional(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray, z: BubbleField) -> float:
    """E[u_h, z_h] from unscaled norms integrated directly."""
    r = residual_values(mesh, functional, u_h)
    r_norm = np.sqrt(mesh.areas * ((r * r) @ TRI_DEG4.weights))
    R_scaled = edge_jump(mesh, functional, u_h)
    R_norm = R_scaled * np.sqrt(mesh.edge_lengths)
    z_elem, z_edge = bubble_norms(mesh, z)
    te = mesh.triangle_edges
    per_elem = r_norm * z_elem + 0.5 * np.sum(R_norm[te] * z_edge[te], axis=1)
    return float(per_elem.sum())


def error_functional_from_parts(mesh: TriMesh, ind: ElementIndicators, z: BubbleField) -> float:
    """E[u_h, z_h] rebuilt from the scaled indicators."""
    z_elem, z_edge = bubble_norms(mesh, z)
    te = mesh.triangle_edges
    r_norm = ind.residual * np.sqrt(mesh.areas)
    R_norm = ind.jump * np.sqrt(mesh.edge_lengths)
    return float(np.sum(r_norm * z_elem) + 0.5 * np.sum(R_norm[te] * z_edge[te]))
