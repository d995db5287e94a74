"""Per-element metric tensors from residuals, jumps and Hessian information.

For every element the metric is

    M_K = rho_K ** (2/d) * det(H_a) ** (-1/d) * H_a,   H_a = I + |H_K| / alpha

with

    rho_K = (1 + (r_K + J_K) / alpha) ** (d/(d+2)) * det(H_a) ** (1/(d+2))

where ``r_K`` is the scaled residual norm and ``J_K`` the length-weighted
scaled jump term. ``alpha`` is fixed by ``sum |K| rho_K = 2 |Omega|``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .estimator import BubbleField, ElementIndicators, indicators as compute_indicators
from .functional import FunctionalSpec
from .mesh import TriMesh

log = logging.getLogger(__name__)

DIM = 2
VARIANTS = ("hbee-aniso", "hessian-aniso", "isotropic", "hbee-only")

ALPHA_LO = 1e-8
ALPHA_HI0 = 1.0
ALPHA_CAP = 1e12


@dataclass
class MetricField:
    tensors: np.ndarray  # (nt, 2, 2)
    rho: np.ndarray  # (nt,)
    alpha: float
    sigma: float
    variant: str
    degenerate: bool = False


def bubble_hessian(mesh: TriMesh, z: BubbleField, K=None) -> np.ndarray:
    """Constant Hessian of the quadratic z_h on each element."""
    G = mesh.barycentric_gradients
    c = z.coefficients[mesh.triangle_edges]  # (nt, 3)
    Gn, Gp = G[:, [1, 2, 0]], G[:, [2, 0, 1]]
    outer = Gn[..., :, None] * Gp[..., None, :]
    H = 4.0 * np.einsum("ki,kiab->kab", c, outer + np.swapaxes(outer, -1, -2))
    return H if K is None else H[K]


def abs_spd(S: np.ndarray) -> np.ndarray:
    """Matrix absolute value sqrt(S^2) of symmetric 2x2 matrices (batched)."""
    S = np.asarray(S, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
    out = (V * np.abs(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _vertex_patch(mesh: TriMesh, v: int, rings: int) -> np.ndarray:
    nbrs = mesh.vertex_neighbors
    patch = {v}
    frontier = {v}
    for _ in range(rings):
        frontier = {w for u in frontier for w in nbrs[u]} - patch
        patch |= frontier
    return np.array(sorted(patch))


def recover_hessian_qls(mesh: TriMesh, u_h: np.ndarray) -> np.ndarray:
    """Quadratic least-squares Hessian recovery, averaged onto elements.

    Each vertex fits a full quadratic to ``u_h`` over its edge neighbours,
    widened to the second ring when the first gives fewer than six
    points or a rank-deficient fit.
    """
    nv = mesh.n_vertices
    Hv = np.zeros((nv, 2, 2))
    X = mesh.vertices
    failed = 0
    for v in range(nv):
        for rings in (1, 2):
            idx = _vertex_patch(mesh, v, rings)
            if len(idx) < 6:
                continue
            d = X[idx] - X[v]
            h = np.max(np.abs(d)) or 1.0
            d = d / h
            A = np.column_stack([np.ones(len(idx)), d[:, 0], d[:, 1], d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
            coef, _, rank, _ = np.linalg.lstsq(A, u_h[idx], rcond=None)
            if rank == 6:
                Hv[v] = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]]) / h**2
                break
        else:
            failed += 1
    if failed:
        log.warning("Hessian recovery: %d rank-deficient patches set to zero", failed)
    return Hv[mesh.triangles].mean(axis=1)


def _det_shifted(absH: np.ndarray, alpha: float) -> np.ndarray:
    """det(I + absH / alpha) for a batch of symmetric 2x2 matrices."""
    tr = absH[:, 0, 0] + absH[:, 1, 1]
    det = absH[:, 0, 0] * absH[:, 1, 1] - absH[:, 0, 1] * absH[:, 1, 0]
    return 1.0 + tr / alpha + det / alpha**2


def rho_values(alpha: float, bracket_data: np.ndarray, absH: np.ndarray) -> np.ndarray:
    """rho_K for all elements; ``bracket_data`` is ``r_K + J_K`` (0 drops the bracket)."""
    d = DIM
    bracket = 1.0 + bracket_data / alpha
    return bracket ** (d / (d + 2)) * _det_shifted(absH, alpha) ** (1.0 / (d + 2))


def rho(alpha: float, residual: float, jump_term: float, absH) -> float:
    """Single-element rho_K."""
    return float(rho_values(alpha, np.array([residual + jump_term]), np.asarray(absH, float)[None])[0])


def alpha_equation_lhs(mesh: TriMesh, alpha: float, bracket_data, absH) -> float:
    return float(np.sum(mesh.areas * rho_values(alpha, bracket_data, absH)))


def solve_alpha(areas: np.ndarray, bracket_data: np.ndarray, absH: np.ndarray, rtol: float = 1e-12):
    """Bisection for ``sum |K| rho_K(alpha) = 2 |Omega|``.

    Returns ``inf`` when no root exists above ``ALPHA_LO`` (numerically zero data).
    """
    areas = np.asarray(areas, dtype=float)
    target = 2.0 * areas.sum()

    def lhs(a):
        return float(np.sum(areas * rho_values(a, bracket_data, absH)))

    lo, hi = ALPHA_LO, ALPHA_HI0
    if lhs(lo) <= target:
        return math.inf
    while lhs(hi) >= target:
        lo = hi
        hi *= 2.0
        if hi > ALPHA_CAP:
            raise ValueError("alpha bracket exceeded cap; indicator data too large")
    for _ in range(400):
        mid = math.sqrt(lo * hi) if hi / lo > 2.0 else 0.5 * (lo + hi)
        val = lhs(mid)
        if abs(val - target) <= rtol * target:
            return mid
        if val > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return 0.5 * (lo + hi)


def metric_from_parts(mesh: TriMesh, bracket_data: np.ndarray, absH: np.ndarray, variant: str,
                      alpha: float | None = None) -> MetricField:
    """Metric from indicator data; ``alpha`` is solved for unless given."""
    nt = mesh.n_triangles
    if alpha is None:
        alpha = solve_alpha(mesh.areas, bracket_data, absH)
    if math.isinf(alpha):
        eye = np.broadcast_to(np.eye(2), (nt, 2, 2)).copy()
        return MetricField(eye, np.ones(nt), math.inf, float(mesh.areas.sum()), variant, degenerate=True)
    r = rho_values(alpha, bracket_data, absH)
    Ha = np.eye(2)[None] + absH / alpha
    detHa = _det_shifted(absH, alpha)
    scale = r ** (2.0 / DIM) * detHa ** (-1.0 / DIM)
    M = scale[:, None, None] * Ha
    sigma = float(np.sum(r * mesh.areas))
    return MetricField(M, r, alpha, sigma, variant)


def metric_tensor(mesh: TriMesh, functional: FunctionalSpec, u_h: np.ndarray, z_h: BubbleField | None,
                  variant: str, ind: ElementIndicators | None = None) -> MetricField:
    """Metric field of the requested variant.

    ``hbee-aniso``: Hessian of z_h, full bracket. ``hessian-aniso``:
    recovered Hessian of u_h, full bracket. ``isotropic``: no Hessian.
    ``hbee-only``: Hessian of z_h, bracket fixed to 1.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown metric variant {variant!r}")
    nt = mesh.n_triangles
    if variant in ("hbee-aniso", "hbee-only"):
        if z_h is None:
            raise ValueError(f"variant {variant} needs the error estimate z_h")
        absH = abs_spd(bubble_hessian(mesh, z_h))
    elif variant == "hessian-aniso":
        absH = abs_spd(recover_hessian_qls(mesh, u_h))
    else:
        absH = np.zeros((nt, 2, 2))
    if variant == "hbee-only":
        bracket_data = np.zeros(nt)
    else:
        ind = ind or compute_indicators(mesh, functional, u_h)
        bracket_data = ind.residual + ind.jump_term(mesh)
    return metric_from_parts(mesh, bracket_data, absH, variant)


def nodal_metric(mesh: TriMesh, tensors: np.ndarray) -> np.ndarray:
    """Area-weighted mean of incident element tensors at every vertex."""
    w = mesh.areas
    acc = np.zeros((mesh.n_vertices, 2, 2))
    wsum = np.zeros(mesh.n_vertices)
    for i in range(3):
        np.add.at(acc, mesh.triangles[:, i], w[:, None, None] * tensors)
        np.add.at(wsum, mesh.triangles[:, i], w)
    return acc / wsum[:, None, None]


def principal_direction(M: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the largest eigenvalue, batched."""
    _, V = np.linalg.eigh(M)
    return V[..., :, -1]


def direction_angle(M1: np.ndarray, M2: np.ndarray) -> np.ndarray:
    """Angle in degrees between principal directions (sign-insensitive)."""
    a, b = principal_direction(M1), principal_direction(M2)
    dot = np.abs(np.sum(a * b, axis=-1))
    cross = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    return np.degrees(np.arctan2(cross, dot))


def anisotropy(M: np.ndarray) -> np.ndarray:
    """Eigenvalue ratio lambda_max / lambda_min."""
    w = np.linalg.eigvalsh(M)
    return w[..., -1] / w[..., 0]
