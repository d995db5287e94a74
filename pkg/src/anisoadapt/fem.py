"""Linear finite elements: quadrature, assembly, Newton solve, error norms."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .functional import FunctionalSpec
from .mesh import TriMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights; weights sum to 1 (fraction of the measure)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _sym3(a: float) -> list[tuple[float, float, float]]:
    return [(a, a, 1 - 2 * a), (a, 1 - 2 * a, a), (1 - 2 * a, a, a)]


_A4, _W4a = 0.4459484909159648863183292538830519883991, 0.2233815896780114656950070084331228043703
_B4, _W4b = 0.09157621350977074345957146340220150785433, 0.1099517436553218676383263249002105289631

TRI_DEG4 = QuadratureRule(
    points=np.array(_sym3(_A4) + _sym3(_B4)),
    weights=np.array([_W4a] * 3 + [_W4b] * 3),
    degree=4,
)

_r15 = np.sqrt(15.0)
_a5, _b5 = (6 - _r15) / 21, (6 + _r15) / 21
TRI_DEG5 = QuadratureRule(
    points=np.array([(1 / 3, 1 / 3, 1 / 3)] + _sym3(_a5) + _sym3(_b5)),
    weights=np.array([9 / 40] + [(155 - _r15) / 1200] * 3 + [(155 + _r15) / 1200] * 3),
    degree=5,
)

#: 3-point Gauss-Legendre on [0, 1]: (parameters, weights summing to 1).
GAUSS3 = (
    np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)]),
    np.array([5 / 18, 8 / 18, 5 / 18]),
)


def quadrature_points(mesh: TriMesh, rule: QuadratureRule) -> np.ndarray:
    """Physical quadrature points, shape (nt, nq, 2)."""
    return np.einsum("qi,kid->kqd", rule.points, mesh.vertices[mesh.triangles])


@dataclass
class SparseSymSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _element_state(mesh: TriMesh, u: np.ndarray, rule: QuadratureRule):
    G = mesh.barycentric_gradients
    xq = quadrature_points(mesh, rule)
    uq = np.einsum("qi,ki->kq", rule.points, u[mesh.triangles])
    g = np.einsum("ki,kid->kd", u[mesh.triangles], G)
    gq = np.broadcast_to(g[:, None, :], uq.shape + (2,)).copy()
    return G, xq, uq, gq


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite integrand in assembly")


def energy(mesh: TriMesh, functional: FunctionalSpec, u: np.ndarray) -> float:
    """I[u] by element quadrature."""
    rule = TRI_DEG4
    _, xq, uq, gq = _element_state(mesh, u, rule)
    vals = functional.F(xq, uq, gq)
    return float(np.sum(mesh.areas * (vals @ rule.weights)))


def dirichlet_nodes(mesh: TriMesh) -> np.ndarray:
    return np.flatnonzero(mesh.boundary_vertex)


def assemble_first_variation(mesh: TriMesh, functional: FunctionalSpec, u: np.ndarray,
                             constrain: bool = True) -> np.ndarray:
    """Vector of delta I[u_h, phi_i] over all hat functions."""
    rule = TRI_DEG4
    G, xq, uq, gq = _element_state(mesh, u, rule)
    Fu = functional.F_u(xq, uq, gq)
    Fg = functional.F_grad(xq, uq, gq)
    _check_finite(Fu, Fg)
    wA = mesh.areas[:, None] * rule.weights[None, :]
    local = np.einsum("kq,kq,qi->ki", wA, Fu, rule.points) + np.einsum(
        "kq,kqd,kid->ki", wA, Fg, G
    )
    out = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    if constrain:
        out[mesh.boundary_vertex] = 0.0
    return out


def local_linearization(mesh: TriMesh, functional: FunctionalSpec, u: np.ndarray,
                        rule: QuadratureRule = TRI_DEG4):
    """(nt, 3, 3) element matrices B[u; phi_j, phi_i]."""
    G, xq, uq, gq = _element_state(mesh, u, rule)
    Fuu = functional.F_uu(xq, uq, gq)
    Fug = functional.F_ug(xq, uq, gq)
    Fgg = functional.F_gg(xq, uq, gq)
    _check_finite(Fuu, Fug, Fgg)
    wA = mesh.areas[:, None] * rule.weights[None, :]
    lam = rule.points
    A = np.einsum("kq,kq,qi,qj->kij", wA, Fuu, lam, lam)
    c = np.einsum("kq,kqd,kjd,qi->kij", wA, Fug, G, lam)
    A += c + np.transpose(c, (0, 2, 1))
    A += np.einsum("kq,kjd,kqde,kie->kij", wA, G, Fgg, G)
    return 0.5 * (A + np.transpose(A, (0, 2, 1)))


def _scatter(n: int, dofs: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    # exact symmetry regardless of summation order
    return ((mat + mat.T) * 0.5).tocsr()


def assemble_linearization(mesh: TriMesh, functional: FunctionalSpec,
                           u: np.ndarray) -> SparseSymSystem:
    """Newton system: matrix B[u; phi_j, phi_i], rhs -delta I, Dirichlet rows as identity."""
    A = _scatter(mesh.n_vertices, mesh.triangles, local_linearization(mesh, functional, u))
    b = -assemble_first_variation(mesh, functional, u)
    fixed = dirichlet_nodes(mesh)
    A = _constrain_identity(A, fixed)
    b[fixed] = 0.0
    return SparseSymSystem(matrix=A, rhs=b, constrained=fixed)


def unconstrained_matrix(mesh: TriMesh, functional: FunctionalSpec, u: np.ndarray) -> sp.csr_matrix:
    return _scatter(mesh.n_vertices, mesh.triangles, local_linearization(mesh, functional, u))


def _constrain_identity(A: sp.csr_matrix, fixed: np.ndarray) -> sp.csr_matrix:
    keep = np.ones(A.shape[0])
    keep[fixed] = 0.0
    D = sp.diags(keep)
    ident = np.zeros(A.shape[0])
    ident[fixed] = 1.0
    return (D @ A @ D + sp.diags(ident)).tocsr()


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_iter: int = 25
    max_damping: int = 30
    damping_start: float = 1e-3
    cg_rtol: float = 1e-12
    direct_below: int = 500


class NewtonError(RuntimeError):
    """Newton failed to converge; ``history`` holds the residual norms."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class NewtonResult:
    u: np.ndarray
    residuals: list
    energies: list
    iterations: int
    damping: list  # mu used for each accepted step, 0 for plain Newton


def solve_spd(A: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-12,
              direct_below: int = 500) -> np.ndarray:
    """Jacobi-preconditioned CG; dense solve for small systems, sparse direct as fallback."""
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    if n < direct_below:
        return np.linalg.solve(A.toarray(), b)
    if not np.any(b):
        return np.zeros(n)
    d = A.diagonal()
    M = sp.diags(1.0 / d)
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, M=M, maxiter=20 * n)
    if info != 0:
        log.debug("CG did not reach rtol=%g (info=%d); using sparse direct solve", rtol, info)
        x = spla.spsolve(A.tocsc(), b)
    return x


def initial_guess(mesh: TriMesh, functional: FunctionalSpec) -> np.ndarray:
    u = np.zeros(mesh.n_vertices)
    bnd = dirichlet_nodes(mesh)
    if functional.dirichlet_value is not None:
        u[bnd] = functional.dirichlet_value(mesh.vertices[bnd])
    return u


def newton_solve(mesh: TriMesh, functional: FunctionalSpec, config: SolverConfig | None = None,
                 u0: np.ndarray | None = None) -> NewtonResult:
    """Minimise I over P1 functions with the given Dirichlet data.

    Newton steps on the interior unknowns, regularised as
    ``(B + mu diag B) d = -delta I``. A step is accepted when the energy
    drop is at least a quarter of the quadratic model's prediction;
    otherwise ``mu`` grows. Plain Newton (``mu = 0``) is always tried
    first, so quadratic functionals converge in one step.
    """
    cfg = config or SolverConfig()
    u = initial_guess(mesh, functional) if u0 is None else np.array(u0, dtype=float)
    bnd = dirichlet_nodes(mesh)
    if u0 is not None and functional.dirichlet_value is not None:
        u[bnd] = functional.dirichlet_value(mesh.vertices[bnd])
    interior = np.flatnonzero(~mesh.boundary_vertex)

    res = [float(np.max(np.abs(assemble_first_variation(mesh, functional, u)), initial=0.0))]
    energies = [energy(mesh, functional, u)]
    damping = []
    mu = 0.0
    it = 0
    while res[-1] > cfg.newton_tol:
        if it >= cfg.max_iter:
            raise NewtonError(f"Newton did not converge in {cfg.max_iter} iterations", res)
        A = unconstrained_matrix(mesh, functional, u)[interior][:, interior].tocsr()
        b = -assemble_first_variation(mesh, functional, u)[interior]
        D = sp.diags(A.diagonal())
        E0 = energies[-1]
        tol_E = 1e-13 * max(1.0, abs(E0))
        for _ in range(cfg.max_damping + 1):
            try:
                d = solve_spd((A + mu * D).tocsr() if mu else A, b, cfg.cg_rtol, cfg.direct_below)
            except (np.linalg.LinAlgError, RuntimeError) as exc:
                raise NewtonError(f"linear solver breakdown: {exc}", res) from exc
            if not np.all(np.isfinite(d)):
                raise NewtonError("linear solver breakdown: non-finite step", res)
            trial = u.copy()
            trial[interior] += d
            try:
                E1 = energy(mesh, functional, trial)
            except FloatingPointError:
                E1 = np.inf
            pred = -(b @ d - 0.5 * d @ (A @ d))
            if np.isfinite(E1) and E1 <= E0 + tol_E and (E1 - E0 <= 0.25 * pred or -pred <= tol_E):
                break
            mu = max(4.0 * mu, cfg.damping_start)
        else:
            raise NewtonError("no energy-decreasing step found", res)
        damping.append(mu)
        if pred < 0 and (E1 - E0) / pred > 0.75:
            mu = mu / 10.0 if mu / 10.0 >= 1e-6 else 0.0
        u = trial
        it += 1
        energies.append(E1)
        res.append(float(np.max(np.abs(assemble_first_variation(mesh, functional, u)), initial=0.0)))
        if it >= 2 and res[-1] >= res[-2] and res[-1] < 1e3 * cfg.newton_tol and damping[-1] == 0.0:
            # stagnation at round-off just above the tolerance
            log.warning("Newton stagnated at residual %.3e", res[-1])
            break
    return NewtonResult(u=u, residuals=res, energies=energies, iterations=it, damping=damping)


def interpolate(mesh: TriMesh, fn) -> np.ndarray:
    """Nodal interpolant of a vectorised function of x."""
    return np.asarray(fn(mesh.vertices), dtype=float)


def gradients(mesh: TriMesh, u: np.ndarray) -> np.ndarray:
    """(nt, 2) element-wise constant gradients of a P1 field."""
    return np.einsum("ki,kid->kd", u[mesh.triangles], mesh.barycentric_gradients)


def h1_seminorm_error(mesh: TriMesh, u_h: np.ndarray, exact_gradient) -> float:
    """|| grad u_ex - grad u_h ||_{L2} with the degree-5 rule."""
    rule = TRI_DEG5
    xq = quadrature_points(mesh, rule)
    diff = exact_gradient(xq) - gradients(mesh, u_h)[:, None, :]
    per = np.sum(diff * diff, axis=-1) @ rule.weights
    return float(np.sqrt(np.sum(mesh.areas * per)))
