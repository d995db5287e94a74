import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisoadapt.functional import (
    aniso_boundary,
    aniso_p34,
    dirichlet_energy,
    get_problem,
    image_energy,
    image_observed,
    sech2,
    tanh_exact,
    tanh_exact_gradient,
    tanh_problem,
    tanh_source,
)

X0 = np.array([0.3, 0.7])


def _builtins():
    return {
        "dirichlet": dirichlet_energy(lambda x: np.sin(3 * x[..., 0]) + x[..., 1]),
        "aniso": aniso_p34(),
        "image": image_energy(image_observed),
    }


def random_states(rng, n=100):
    x = rng.uniform(0, 1, size=(n, 2))
    u = rng.uniform(-2, 2, size=n)
    g = rng.uniform(-3, 3, size=(n, 2))
    return x, u, g


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.abs(b), 1.0)


def check_derivatives(spec, x, u, g, h=1e-5, tol=1e-6):
    """Central differences of F, F_u and F_grad against the analytic derivatives."""
    e = np.eye(2)
    fd_u = (spec.F(x, u + h, g) - spec.F(x, u - h, g)) / (2 * h)
    assert np.max(_rel(fd_u, spec.F_u(x, u, g))) < tol
    for i in range(2):
        fd = (spec.F(x, u, g + h * e[i]) - spec.F(x, u, g - h * e[i])) / (2 * h)
        assert np.max(_rel(fd, spec.F_grad(x, u, g)[..., i])) < tol
    fd_uu = (spec.F_u(x, u + h, g) - spec.F_u(x, u - h, g)) / (2 * h)
    assert np.max(_rel(fd_uu, spec.F_uu(x, u, g))) < tol
    fd_ug = (spec.F_grad(x, u + h, g) - spec.F_grad(x, u - h, g)) / (2 * h)
    assert np.max(_rel(fd_ug, spec.F_ug(x, u, g))) < tol
    Fgg = spec.F_gg(x, u, g)
    for i in range(2):
        fd = (spec.F_grad(x, u, g + h * e[i]) - spec.F_grad(x, u, g - h * e[i])) / (2 * h)
        assert np.max(_rel(fd, Fgg[..., :, i])) < tol
    np.testing.assert_array_equal(Fgg, np.swapaxes(Fgg, -1, -2))


@pytest.mark.parametrize("name", ["dirichlet", "aniso", "image"])
def test_derivatives_match_finite_differences(name, rng):
    x, u, g = random_states(rng)
    check_derivatives(_builtins()[name], x, u, g)


def test_dirichlet_examples():
    spec = dirichlet_energy(lambda x: np.zeros(np.shape(x)[:-1]))
    g = np.array([3.0, 4.0])
    assert spec.F(X0, 0.0, g) == 12.5
    np.testing.assert_array_equal(spec.F_grad(X0, 0.0, g), g)
    np.testing.assert_array_equal(spec.F_gg(X0, 0.0, g), np.eye(2))
    assert spec.F_uu(X0, 0.0, g) == 0.0


def test_aniso_examples():
    spec = aniso_p34()
    assert spec.F(X0, 0.0, np.zeros(2)) == 1.0
    assert spec.F(X0, 0.0, np.array([0.0, 1.0])) == pytest.approx(2**0.75 + 1000)
    np.testing.assert_array_equal(spec.F_grad(X0, 0.0, np.zeros(2)), [0.0, 0.0])
    assert spec.F_u(X0, 5.0, np.ones(2)) == 0.0


def test_image_examples():
    spec = image_energy(image_observed)
    p = image_observed(X0)
    assert spec.F(X0, p, np.zeros(2)) == pytest.approx(1.0)
    assert spec.F_uu(X0, 0.3, np.ones(2)) == 2.0
    assert image_observed(np.array([0.0, 0.0])) == 1.0
    assert 1.0 / (1.0 + math.exp(-1250.0)) == 1.0
    assert image_observed(np.array([1.0, 1.0])) == pytest.approx(math.exp(-750.0), rel=1e-12)


@given(gx=st.floats(-5, 5), gy=st.floats(-5, 5), x=st.floats(0, 1), y=st.floats(0, 1))
def test_gradient_part_has_no_x_dependence(gx, gy, x, y):
    g = np.array([gx, gy])
    for spec in (aniso_p34(), image_energy(image_observed)):
        np.testing.assert_array_equal(spec.F_grad(np.array([x, y]), 0.0, g), spec.F_grad(X0, 0.0, g))


def test_tanh_values():
    assert tanh_exact(np.array([0.5, 0.5])) == pytest.approx(2 * math.tanh(30), abs=1e-15)
    assert tanh_exact(np.array([0.5, 0.5])) == pytest.approx(2.0, abs=1e-15)
    g = tanh_exact_gradient(np.array([0.5, 0.0]))
    np.testing.assert_allclose(g, [60 * sech2(30.0) - 60.0, 60.0], rtol=1e-14)
    np.testing.assert_allclose(g, [-60.0, 60.0], rtol=1e-12)


def test_sech2_is_stable():
    z = np.array([0.0, 1.0, -1.0, 400.0, -800.0])
    np.testing.assert_allclose(sech2(z[:3]), 1.0 / np.cosh(z[:3]) ** 2, rtol=1e-14)
    assert np.all(np.isfinite(sech2(z)))


def test_tanh_source_is_minus_laplacian(rng):
    # oracle: fourth-order finite-difference Laplacian of the exact solution
    pts = rng.uniform(0.05, 0.95, size=(10, 2))
    h = 3e-4
    for p in pts:
        lap = 0.0
        for e in h * np.eye(2):
            lap += (-tanh_exact(p + 2 * e) + 16 * tanh_exact(p + e) - 30 * tanh_exact(p)
                    + 16 * tanh_exact(p - e) - tanh_exact(p - 2 * e)) / (12 * h * h)
        f = tanh_source(p)
        assert abs(-lap - f) < 1e-5 * max(abs(f), 1.0)


def test_tanh_gradient_matches_fd(rng):
    pts = rng.uniform(0, 1, size=(20, 2))
    h = 1e-6
    for p in pts:
        fd = [(tanh_exact(p + h * e) - tanh_exact(p - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(tanh_exact_gradient(p), fd, rtol=1e-6, atol=1e-6)


def test_problem_registry():
    P = tanh_problem()
    assert P.has_exact_solution
    assert not get_problem("aniso").has_exact_solution
    with pytest.raises(ValueError, match="unknown problem"):
        get_problem("nope")


def test_aniso_boundary_corners_take_x_side_value():
    pts = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0, 0.5], [0.5, 0], [0.5, 1], [1, 0.2]])
    np.testing.assert_array_equal(aniso_boundary(pts), [1, 1, 1, 1, 1, 2, 2, 1])
