"""Variational integrands F(x, u, grad u) with first and second derivatives.

All callables are vectorised: ``x`` has shape ``(..., 2)``, ``u`` shape
``(...)`` and ``g`` (the gradient argument) shape ``(..., 2)``. Second
derivatives with respect to the gradient are returned as ``(..., 2, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

Array = np.ndarray


@dataclass(frozen=True)
class FunctionalSpec:
    name: str
    F: Callable[[Array, Array, Array], Array]
    F_u: Callable[[Array, Array, Array], Array]
    F_grad: Callable[[Array, Array, Array], Array]
    F_uu: Callable[[Array, Array, Array], Array]
    F_ug: Callable[[Array, Array, Array], Array]
    F_gg: Callable[[Array, Array, Array], Array]
    dirichlet_value: Optional[Callable[[Array], Array]] = None
    exact_solution: Optional[Callable[[Array], Array]] = None
    exact_gradient: Optional[Callable[[Array], Array]] = None
    # divergence of F_grad through its explicit x-dependence only
    flux_divergence_x: Optional[Callable[[Array, Array, Array], Array]] = None


@dataclass(frozen=True)
class ProblemInstance:
    """A functional on the unit square together with its Dirichlet data."""

    label: str
    functional: FunctionalSpec

    def boundary_value(self, x: Array) -> Array:
        return self.functional.dirichlet_value(x)

    @property
    def has_exact_solution(self) -> bool:
        return self.functional.exact_gradient is not None


def _zeros(u):
    return np.zeros(np.shape(u))


def _zeros_vec(u):
    return np.zeros(np.shape(u) + (2,))


def _sq(g):
    return np.sum(g * g, axis=-1)


def _eye_like(u):
    out = np.zeros(np.shape(u) + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    return out


def _outer(g):
    return g[..., :, None] * g[..., None, :]


def dirichlet_energy(f_source, g_boundary=None, exact=None, exact_gradient=None,
                     name="dirichlet") -> FunctionalSpec:
    """F = |g|^2 / 2 - u f(x)."""

    def F(x, u, g):
        return 0.5 * _sq(g) - u * f_source(x)

    def F_u(x, u, g):
        return -f_source(x) * np.ones(np.shape(u))

    return FunctionalSpec(
        name=name,
        F=F,
        F_u=F_u,
        F_grad=lambda x, u, g: np.array(g, dtype=float, copy=True),
        F_uu=lambda x, u, g: _zeros(u),
        F_ug=lambda x, u, g: _zeros_vec(u),
        F_gg=lambda x, u, g: _eye_like(u),
        dirichlet_value=g_boundary,
        exact_solution=exact,
        exact_gradient=exact_gradient,
    )


def aniso_p34() -> FunctionalSpec:
    """F = (1 + |g|^2)^(3/4) + 1000 g_y^2 (no explicit u dependence)."""

    def F(x, u, g):
        return (1.0 + _sq(g)) ** 0.75 + 1000.0 * g[..., 1] ** 2

    def F_grad(x, u, g):
        out = 1.5 * (1.0 + _sq(g))[..., None] ** -0.25 * g
        out[..., 1] += 2000.0 * g[..., 1]
        return out

    def F_gg(x, u, g):
        s = (1.0 + _sq(g))[..., None, None]
        out = 1.5 * s**-0.25 * _eye_like(g[..., 0]) - 0.75 * s**-1.25 * _outer(g)
        out[..., 1, 1] += 2000.0
        return out

    return FunctionalSpec(
        name="aniso_p34",
        F=F,
        F_u=lambda x, u, g: _zeros(g[..., 0]),
        F_grad=F_grad,
        F_uu=lambda x, u, g: _zeros(g[..., 0]),
        F_ug=lambda x, u, g: _zeros_vec(g[..., 0]),
        F_gg=F_gg,
    )


def image_energy(p_observed) -> FunctionalSpec:
    """F = (p(x) - u)^2 + (1 + |g|^2)^(1/2)."""

    def F(x, u, g):
        return (p_observed(x) - u) ** 2 + np.sqrt(1.0 + _sq(g))

    def F_grad(x, u, g):
        return g / np.sqrt(1.0 + _sq(g))[..., None]

    def F_gg(x, u, g):
        s = (1.0 + _sq(g))[..., None, None]
        return s**-0.5 * _eye_like(g[..., 0]) - s**-1.5 * _outer(g)

    return FunctionalSpec(
        name="image",
        F=F,
        F_u=lambda x, u, g: -2.0 * (p_observed(x) - u),
        F_grad=F_grad,
        F_uu=lambda x, u, g: 2.0 * np.ones(np.shape(u)),
        F_ug=lambda x, u, g: _zeros_vec(u),
        F_gg=F_gg,
    )


def sech2(z):
    """sech(z)^2 without overflow."""
    e = np.exp(-2.0 * np.abs(z))
    return 4.0 * e / (1.0 + e) ** 2


def tanh_exact(x):
    x = np.asarray(x, dtype=float)
    return np.tanh(60.0 * x[..., 0]) - np.tanh(60.0 * (x[..., 0] - x[..., 1]) - 30.0)


def tanh_exact_gradient(x):
    x = np.asarray(x, dtype=float)
    s1 = sech2(60.0 * x[..., 0])
    s2 = sech2(60.0 * (x[..., 0] - x[..., 1]) - 30.0)
    return np.stack([60.0 * s1 - 60.0 * s2, 60.0 * s2], axis=-1)


def tanh_source(x):
    """Minus the Laplacian of :func:`tanh_exact`."""
    x = np.asarray(x, dtype=float)
    a = 60.0 * x[..., 0]
    w = 60.0 * (x[..., 0] - x[..., 1]) - 30.0
    return 7200.0 * np.tanh(a) * sech2(a) - 14400.0 * np.tanh(w) * sech2(w)


def tanh_problem() -> ProblemInstance:
    spec = dirichlet_energy(
        tanh_source, g_boundary=tanh_exact, exact=tanh_exact,
        exact_gradient=tanh_exact_gradient, name="tanh",
    )
    return ProblemInstance(label="tanh", functional=spec)


def aniso_boundary(x):
    """u = 1 on x in {0, 1}, u = 2 on y in {0, 1}; corners take the x-side value."""
    x = np.asarray(x, dtype=float)
    on_x_side = (np.abs(x[..., 0]) < 1e-12) | (np.abs(x[..., 0] - 1.0) < 1e-12)
    return np.where(on_x_side, 1.0, 2.0)


def aniso_problem() -> ProblemInstance:
    spec = aniso_p34()
    spec = FunctionalSpec(**{**spec.__dict__, "dirichlet_value": aniso_boundary})
    return ProblemInstance(label="aniso", functional=spec)


def image_observed(x):
    x = np.asarray(x, dtype=float)
    return expit(-1000.0 * (x[..., 0] + x[..., 1] - 1.25))


def image_problem() -> ProblemInstance:
    spec = image_energy(image_observed)
    spec = FunctionalSpec(**{**spec.__dict__, "dirichlet_value": image_observed})
    return ProblemInstance(label="image", functional=spec)


def linear_patch_problem(a=1.0, b=1.0, c=0.0) -> ProblemInstance:
    """Zero source with linear data ``a x + b y + c``; P1 reproduces it exactly."""

    def lin(x):
        x = np.asarray(x, dtype=float)
        return a * x[..., 0] + b * x[..., 1] + c

    def lin_grad(x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        out[..., 0], out[..., 1] = a, b
        return out

    spec = dirichlet_energy(
        lambda x: np.zeros(np.shape(x)[:-1]), g_boundary=lin, exact=lin,
        exact_gradient=lin_grad, name="patch",
    )
    return ProblemInstance(label="patch", functional=spec)


PROBLEMS = {"tanh": tanh_problem, "aniso": aniso_problem, "image": image_problem,
            "patch": linear_patch_problem}


def get_problem(name: str) -> ProblemInstance:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
