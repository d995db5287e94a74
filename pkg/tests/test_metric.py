import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisoadapt.adapt import alignment_quality
from anisoadapt.estimator import BubbleField, evaluate_bubble, hbee, indicators
from anisoadapt.fem import interpolate, newton_solve
from anisoadapt.functional import tanh_problem
from anisoadapt.mesh import build_mesh, unit_square_crisscross
from anisoadapt.metric import (
    ALPHA_LO,
    VARIANTS,
    abs_spd,
    alpha_equation_lhs,
    anisotropy,
    bubble_hessian,
    direction_angle,
    metric_from_parts,
    metric_tensor,
    nodal_metric,
    principal_direction,
    recover_hessian_qls,
    rho,
    solve_alpha,
)


@pytest.fixture(scope="module")
def tanh16():
    m = unit_square_crisscross(16)
    spec = tanh_problem().functional
    u = newton_solve(m, spec).u
    return m, spec, u, hbee(m, spec, u)


def _spd(draw_vals):
    a, b, c = draw_vals
    L = np.array([[a, 0.0], [b, c]])
    return L @ L.T + 1e-3 * np.eye(2)


spd_st = st.tuples(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10)).map(_spd)


def test_bubble_hessian_zero(grid8):
    H = bubble_hessian(grid8, BubbleField(np.zeros(grid8.n_edges)))
    assert np.all(H == 0)


def test_bubble_hessian_reference_example(right_triangle):
    m = right_triangle
    e = [i for i, (a, b) in enumerate(np.sort(m.edges, axis=1)) if (a, b) == (0, 1)][0]
    c = np.zeros(m.n_edges)
    c[e] = 1.0
    H = bubble_hessian(m, BubbleField(c))[0]
    np.testing.assert_allclose(H, [[-8, -4], [-4, 0]], atol=1e-14)


def test_bubble_hessian_matches_finite_differences(rng):
    m = build_mesh([[0.1, 0.2], [1.3, 0.4], [0.5, 1.1]], [[0, 1, 2]])
    z = BubbleField(rng.normal(size=3))
    H = bubble_hessian(m, z)[0]
    X = m.vertices
    T = np.column_stack([X[1] - X[0], X[2] - X[0]])
    Tinv = np.linalg.inv(T)

    def zval(p):
        lam12 = Tinv @ (p - X[0])
        bary = np.array([[1 - lam12.sum(), lam12[0], lam12[1]]])
        return evaluate_bubble(m, z, 0, bary)[0]

    p0 = X.mean(axis=0)
    h = 1e-3
    E = np.eye(2) * h
    fd = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            fd[i, j] = (zval(p0 + E[i] + E[j]) - zval(p0 + E[i] - E[j])
                        - zval(p0 - E[i] + E[j]) + zval(p0 - E[i] - E[j])) / (4 * h * h)
    np.testing.assert_allclose(fd, H, rtol=1e-6, atol=1e-6 * np.abs(H).max())


def test_abs_spd_examples():
    np.testing.assert_allclose(abs_spd(np.diag([2.0, -3.0])), np.diag([2.0, 3.0]), atol=1e-15)
    assert np.all(abs_spd(np.zeros((2, 2))) == 0)
    np.testing.assert_allclose(abs_spd(np.array([[0.0, 1.0], [1.0, 0.0]])), np.eye(2), atol=1e-15)


@given(a=st.floats(-10, 10), b=st.floats(-10, 10), c=st.floats(-10, 10))
def test_abs_spd_squares_to_s_squared(a, b, c):
    S = np.array([[a, b], [b, c]])
    A = abs_spd(S)
    np.testing.assert_allclose(A @ A, S @ S, atol=1e-10 * max(1.0, np.abs(S).max() ** 2))
    assert np.linalg.eigvalsh(A)[0] >= -1e-12 * max(1.0, np.abs(S).max())


def test_solve_alpha_single_element():
    a = solve_alpha(np.array([1.0]), np.array([3.0]), np.zeros((1, 2, 2)))
    assert a == pytest.approx(1.0, rel=1e-10)


def test_solve_alpha_degenerate():
    assert solve_alpha(np.ones(4) / 4, np.zeros(4), np.zeros((4, 2, 2))) == np.inf
    m = unit_square_crisscross(2)
    M = metric_from_parts(m, np.zeros(m.n_triangles), np.zeros((m.n_triangles, 2, 2)), "isotropic")
    assert M.degenerate and M.alpha == np.inf
    np.testing.assert_array_equal(M.tensors, np.broadcast_to(np.eye(2), M.tensors.shape))


def test_alpha_equation_residual_and_monotone(tanh16):
    m, spec, u, z = tanh16
    ind = indicators(m, spec, u)
    bracket = ind.residual + ind.jump_term(m)
    absH = abs_spd(bubble_hessian(m, z))
    a = solve_alpha(m.areas, bracket, absH)
    assert abs(alpha_equation_lhs(m, a, bracket, absH) - 2.0) <= 1e-8 * 2.0
    grid = np.geomspace(ALPHA_LO, 4 * a, 10)
    vals = [alpha_equation_lhs(m, g, bracket, absH) for g in grid]
    assert all(b < v for v, b in zip(vals, vals[1:]))


def test_rho_examples():
    assert rho(1.0, 0.0, 0.0, np.zeros((2, 2))) == pytest.approx(1.0, abs=1e-15)
    assert rho(1.0, 3.0, 0.0, np.zeros((2, 2))) == pytest.approx(2.0, abs=1e-15)
    assert rho(1.0, 0.0, 0.0, np.eye(2)) == pytest.approx(np.sqrt(2.0), abs=1e-15)


def test_metric_formula_example(right_triangle):
    # alpha = 1, bracket = 1 (no data), |H| = I  ->  M = sqrt(2) I, det M = 2 = rho^2
    M = metric_from_parts(right_triangle, np.zeros(1), np.eye(2)[None], "hbee-aniso", alpha=1.0)
    np.testing.assert_allclose(M.tensors[0], np.sqrt(2) * np.eye(2), rtol=1e-14)
    assert M.rho[0] == pytest.approx(np.sqrt(2), rel=1e-14)
    assert np.linalg.det(M.tensors[0]) == pytest.approx(2.0, rel=1e-12)


def test_solved_alpha_with_unit_hessian():
    # |K| = 1, |H| = I: det(I + I/a)^(1/4) = 2  ->  a = 1/3
    m = build_mesh([[0, 0], [1, 0], [0, 2]], [[0, 1, 2]])
    M = metric_from_parts(m, np.zeros(1), np.eye(2)[None], "hbee-aniso")
    assert M.alpha == pytest.approx(1.0 / 3.0, rel=1e-9)
    assert M.sigma == pytest.approx(2.0, rel=1e-8)


@pytest.mark.parametrize("variant", VARIANTS)
def test_metric_invariants_all_variants(tanh16, variant):
    m, spec, u, z = tanh16
    M = metric_tensor(m, spec, u, z, variant)
    T = M.tensors
    assert np.all(np.linalg.eigvalsh(T)[:, 0] > 0)
    np.testing.assert_array_equal(T, np.swapaxes(T, 1, 2))
    np.testing.assert_allclose(np.linalg.det(T), M.rho**2, rtol=1e-10)
    assert M.sigma == pytest.approx(2.0, rel=1e-8)
    if variant == "isotropic":
        np.testing.assert_allclose(anisotropy(T), 1.0, atol=1e-12)


def test_hbee_aniso_eigenvectors_follow_hessian(tanh16):
    m, spec, u, z = tanh16
    M = metric_tensor(m, spec, u, z, "hbee-aniso")
    absH = abs_spd(bubble_hessian(m, z))
    w = np.linalg.eigvalsh(absH)
    sel = (w[:, 1] - w[:, 0]) > 1e-6 * w[:, 1].max()
    ang = np.radians(direction_angle(M.tensors[sel], absH[sel]))
    assert sel.sum() > 0
    assert np.all(ang < 1e-8)


def test_zero_bubble_gives_isotropic_shape(tanh16):
    m, spec, u, _ = tanh16
    M = metric_tensor(m, spec, u, BubbleField(np.zeros(m.n_edges)), "hbee-aniso")
    np.testing.assert_allclose(M.tensors, M.rho[:, None, None] * np.eye(2), rtol=1e-12)


def test_variant_inputs_checked(tanh16):
    m, spec, u, _ = tanh16
    with pytest.raises(ValueError):
        metric_tensor(m, spec, u, None, "hbee-aniso")
    with pytest.raises(ValueError):
        metric_tensor(m, spec, u, None, "nope")


def test_hbee_only_ignores_indicators(tanh16):
    m, spec, u, z = tanh16
    M = metric_tensor(m, spec, u, z, "hbee-only")
    absH = abs_spd(bubble_hessian(m, z))
    M2 = metric_from_parts(m, np.zeros(m.n_triangles), absH, "hbee-only")
    np.testing.assert_allclose(M.tensors, M2.tensors, rtol=1e-14)


def test_qls_recovery_quadratics():
    m = unit_square_crisscross(6)
    for f, H in [(lambda x: x[..., 0] ** 2 + x[..., 1] ** 2, 2 * np.eye(2)),
                 (lambda x: x[..., 0] * x[..., 1], np.array([[0.0, 1.0], [1.0, 0.0]])),
                 (lambda x: 3 * x[..., 0] - x[..., 1] + 2, np.zeros((2, 2)))]:
        Hk = recover_hessian_qls(m, interpolate(m, f))
        np.testing.assert_allclose(Hk, np.broadcast_to(H, Hk.shape), atol=1e-8)


@given(M=spd_st, theta=st.floats(0, 2 * np.pi))
def test_alignment_equality_construction(M, theta):
    # F' = M^(-1/2) Q  gives  (F')^T M F' = I, so trace = d det^(1/d)
    w, V = np.linalg.eigh(M)
    Minvh = (V / np.sqrt(w)) @ V.T
    Q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    F = Minvh @ Q
    S = F.T @ M @ F
    lhs = np.trace(S)
    rhs = 2 * np.sqrt(np.linalg.det(S))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@given(M=spd_st, theta=st.floats(0, 2 * np.pi), s=st.floats(0.1, 10))
def test_alignment_quality_of_aligned_element(M, theta, s):
    from anisoadapt.mesh import REF_VERTICES

    w, V = np.linalg.eigh(M)
    Minvh = (V / np.sqrt(w)) @ V.T
    Q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    F = s * Minvh @ Q
    pts = REF_VERTICES @ F.T
    if np.linalg.det(F) < 0:
        pts = pts[[0, 2, 1]]
    m = build_mesh(pts, [[0, 1, 2]])
    q = alignment_quality(m, M[None])
    assert q[0] == pytest.approx(1.0, abs=1e-10)


def test_nodal_metric_average(square2):
    T = np.array([np.eye(2), 3 * np.eye(2)])
    N = nodal_metric(square2, T)
    np.testing.assert_allclose(N[0], 2 * np.eye(2))
    np.testing.assert_allclose(N[1], np.eye(2))
    np.testing.assert_allclose(N[3], 3 * np.eye(2))


def test_principal_direction():
    d = principal_direction(np.diag([1.0, 5.0]))
    assert abs(d[1]) == pytest.approx(1.0)
