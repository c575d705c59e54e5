"""Benchmark problems and error evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import forms
from .forms import DIRICHLET, NEUMANN, ProblemDef
from .mesh import Mesh, lshape_mesh, rectangle_mesh

RECT_TAGS = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    problem: ProblemDef
    mesh_factory: Callable[[], Mesh]
    eta_ref: float = 0.25
    degrees: tuple = (1, 2, 3)
    initial_guess: Callable | None = None
    params: dict = field(default_factory=dict)

    @property
    def nonlinear(self) -> bool:
        return self.problem.nonlinear

    @property
    def has_exact(self) -> bool:
        return self.problem.exact is not None

    def initial_mesh(self) -> Mesh:
        return self.mesh_factory()


def _x(p):
    return p[..., 0]


def _y(p):
    return p[..., 1]


def _all_dirichlet(tags=RECT_TAGS):
    return {t: DIRICHLET for t in tags}


# ---------------------------------------------------------------------------


def lshape(alpha: float = 2.0 / 3.0) -> Benchmark:
    """Laplace problem with a corner singularity ``r^a sin(a theta)``.

    The angle is the continuous branch ``atan2(y, x)`` in ``[-pi/2, pi]`` on
    the L-shaped domain without the third quadrant.
    """

    def exact(p):
        r = np.hypot(_x(p), _y(p))
        return r**alpha * np.sin(alpha * np.arctan2(_y(p), _x(p)))

    def exact_grad(p):
        x, y = _x(p), _y(p)
        r = np.hypot(x, y)
        t = np.arctan2(y, x)
        rr = np.where(r > 0, r, 1.0)
        ur = alpha * rr ** (alpha - 1) * np.sin(alpha * t)
        ut = alpha * rr ** (alpha - 1) * np.cos(alpha * t)
        g = np.stack([ur * np.cos(t) - ut * np.sin(t), ur * np.sin(t) + ut * np.cos(t)], axis=-1)
        return np.where((r > 0)[..., None], g, np.inf)

    problem = ProblemDef(
        kappa=forms.constant_tensor(1.0),
        boundary={"boundary": DIRICHLET},
        source=lambda p: np.zeros(np.shape(p)[:-1]),
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        name="lshape",
    )
    return Benchmark("lshape", problem, lshape_mesh, params={"alpha": alpha})


def heterogeneous(eps1: float = 0.1, eps2: float = 1.0) -> Benchmark:
    """Advection with diffusion ``diag(eps_i, 1)`` that jumps at ``x = 1/2``.

    The exact solution depends on ``x`` only and is built from exponential
    boundary layers on each half, glued with continuous value and normal flux
    at the interface.  The velocity is ``(1, 0)``.
    """
    e1, e2 = np.exp(0.5 / eps1), np.exp(0.5 / eps2)
    a = e1 / (1.0 - e1)
    u_half = a / (a + 1.0 / (1.0 - e2))

    def exact(p):
        x = _x(p)
        # evaluate each branch only where it applies to avoid overflow
        xl = np.minimum(x, 0.5)
        xr = np.maximum(x, 0.5)
        left = (u_half - e1 + (1.0 - u_half) * np.exp(xl / eps1)) / (1.0 - e1)
        right = (-e2 * u_half + u_half * np.exp((xr - 0.5) / eps2)) / (1.0 - e2)
        return np.where(x <= 0.5, left, right) + 0.0 * _y(p)

    def exact_grad(p):
        x = _x(p)
        xl = np.minimum(x, 0.5)
        xr = np.maximum(x, 0.5)
        left = (1.0 - u_half) * np.exp(xl / eps1) / (eps1 * (1.0 - e1))
        right = u_half * np.exp((xr - 0.5) / eps2) / (eps2 * (1.0 - e2))
        gx = np.where(x <= 0.5, left, right)
        return np.stack([gx, np.zeros_like(gx)], axis=-1)

    def kappa(p):
        eps = np.where(_x(p) < 0.5, eps1, eps2)
        K = np.zeros(np.shape(p)[:-1] + (2, 2))
        K[..., 0, 0] = eps
        K[..., 1, 1] = 1.0
        return K

    problem = ProblemDef(
        kappa=kappa,
        beta=forms.constant_vector([1.0, 0.0]),
        boundary=_all_dirichlet(),
        source=lambda p: np.zeros(np.shape(p)[:-1]),
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        name="heterogeneous",
    )
    return Benchmark(
        "heterogeneous", problem, lambda: rectangle_mesh(8, 8),
        params={"eps1": eps1, "eps2": eps2, "u_half": u_half},
    )


def anisotropic(r_kappa: float, tau: float = 1e-3) -> Benchmark:
    """Pure diffusion with ``kappa = diag(1, 1/r)`` and a Gaussian solution."""
    if r_kappa <= 0:
        raise ValueError("anisotropy ratio must be positive")
    c = 1.0 / (4.0 * np.pi * np.sqrt(r_kappa * tau))
    rt = r_kappa * tau

    def exact(p):
        return c * np.exp(-(_x(p) ** 2 + rt * _y(p) ** 2))

    def exact_grad(p):
        u = exact(p)
        return np.stack([-2 * _x(p) * u, -2 * rt * _y(p) * u], axis=-1)

    def source(p):
        x, y = _x(p), _y(p)
        return -((4 * x**2 - 2) + (4 * r_kappa * tau**2 * y**2 - 2 * tau)) * exact(p)

    problem = ProblemDef(
        kappa=forms.constant_tensor(np.diag([1.0, 1.0 / r_kappa])),
        boundary=_all_dirichlet(),
        source=source,
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        name=f"anisotropic-{r_kappa:g}",
    )
    return Benchmark(
        problem.name, problem, lambda: rectangle_mesh(8, 8, -1.0, 1.0, -0.5, 0.5),
        params={"r_kappa": r_kappa, "tau": tau},
    )


def eriksson_johnson(kappa: float = 1e-2) -> Benchmark:
    """Convection-dominated problem with an outflow boundary layer at x = 1."""
    s = np.sqrt(1.0 + 4.0 * kappa**2 * np.pi**2)
    r1, r2 = (1.0 + s) / (2.0 * kappa), (1.0 - s) / (2.0 * kappa)
    den = np.exp(-r1) - np.exp(-r2)

    def exact(p):
        x, y = _x(p), _y(p)
        return (np.exp(r1 * (x - 1)) - np.exp(r2 * (x - 1))) / den * np.sin(np.pi * y)

    def exact_grad(p):
        x, y = _x(p), _y(p)
        gx = (r1 * np.exp(r1 * (x - 1)) - r2 * np.exp(r2 * (x - 1))) / den * np.sin(np.pi * y)
        gy = (np.exp(r1 * (x - 1)) - np.exp(r2 * (x - 1))) / den * np.pi * np.cos(np.pi * y)
        return np.stack([gx, gy], axis=-1)

    problem = ProblemDef(
        kappa=forms.constant_tensor(kappa),
        beta=forms.constant_vector([1.0, 0.0]),
        boundary=_all_dirichlet(),
        source=lambda p: np.zeros(np.shape(p)[:-1]),
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        name="eriksson-johnson",
    )
    return Benchmark("eriksson-johnson", problem, lambda: rectangle_mesh(8, 8), params={"kappa": kappa, "r1": r1, "r2": r2})


def burgers_isotropic(kappa: float = 1e-3) -> Benchmark:
    """Burgers flux ``b u^2/2`` with ``b = (1, 1)`` and a tanh inner layer."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    b = np.array([1.0, 1.0])
    c = 1.0 / np.sqrt(5.0 * kappa)

    def arg(p):
        return c * (2 * _x(p) - _y(p) - 0.25)

    def exact(p):
        return 0.5 * (1.0 - np.tanh(arg(p)))

    def exact_grad(p):
        sech2 = 1.0 / np.cosh(arg(p)) ** 2
        return np.stack([-c * sech2, 0.5 * c * sech2], axis=-1)

    def source(p):
        s = arg(p)
        sech2 = 1.0 / np.cosh(s) ** 2
        return -0.5 * c * exact(p) * sech2 - sech2 * np.tanh(s)

    problem = ProblemDef(
        kappa=forms.constant_tensor(kappa),
        boundary=_all_dirichlet(),
        source=source,
        dirichlet=exact,
        flux=lambda u: 0.5 * np.asarray(u)[..., None] ** 2 * b,
        dflux=lambda u: np.asarray(u)[..., None] * b,
        d2flux=lambda u: np.ones(np.shape(u))[..., None] * b,
        exact=exact,
        exact_grad=exact_grad,
        name="burgers-isotropic",
    )
    return Benchmark(
        "burgers-isotropic", problem, lambda: rectangle_mesh(8, 8),
        degrees=(1, 2), initial_guess=lambda p: np.full(np.shape(p)[:-1], 0.5), params={"kappa": kappa},
    )


def burgers_single(kappa: float = 1e-2) -> Benchmark:
    """Flux ``(u^2/2, u)`` with data ``1 - 2x`` and a shock; no exact solution."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")

    def data(p):
        return 1.0 - 2.0 * _x(p)

    def flux(u):
        u = np.asarray(u)
        return np.stack([0.5 * u**2, u], axis=-1)

    def dflux(u):
        u = np.asarray(u)
        return np.stack([u, np.ones_like(u)], axis=-1)

    def d2flux(u):
        u = np.asarray(u)
        return np.stack([np.ones_like(u), np.zeros_like(u)], axis=-1)

    problem = ProblemDef(
        kappa=forms.constant_tensor(kappa),
        boundary={"left": DIRICHLET, "right": DIRICHLET, "bottom": DIRICHLET, "top": NEUMANN},
        source=lambda p: np.zeros(np.shape(p)[:-1]),
        dirichlet=data,
        neumann=lambda p: np.zeros(np.shape(p)[:-1]),
        flux=flux,
        dflux=dflux,
        d2flux=d2flux,
        name=f"burgers-single-{kappa:.0e}".replace("e-0", "e-"),
    )
    return Benchmark(
        problem.name, problem, lambda: rectangle_mesh(4, 4),
        degrees=(3,), initial_guess=data, params={"kappa": kappa},
    )


def polynomial(coeffs, kappa: float = 1.0, beta=(1.0, 1.0)) -> ProblemDef:
    """Advection-diffusion problem whose exact solution is the polynomial
    ``sum_ij coeffs[i, j] x^i y^j`` on the unit square.

    Used for consistency checks: a discretization of degree at least the
    polynomial degree reproduces it up to rounding.
    """
    from numpy.polynomial import polynomial as P

    c = np.asarray(coeffs, dtype=float)
    cx, cy = P.polyder(c, axis=0), P.polyder(c, axis=1)
    cxx = P.polyder(c, 2, axis=0)
    cyy = P.polyder(c, 2, axis=1)
    b = np.asarray(beta, dtype=float)

    def ev(a, p):
        return P.polyval2d(_x(p), _y(p), a) if a.size else np.zeros(np.shape(p)[:-1])

    def exact(p):
        return ev(c, p)

    def exact_grad(p):
        return np.stack([ev(cx, p), ev(cy, p)], axis=-1)

    def source(p):
        return -kappa * (ev(cxx, p) + ev(cyy, p)) + b[0] * ev(cx, p) + b[1] * ev(cy, p)

    return ProblemDef(
        kappa=forms.constant_tensor(kappa),
        beta=forms.constant_vector(b),
        boundary=_all_dirichlet(),
        source=source,
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        name="polynomial",
    )


REGISTRY: dict[str, Callable[[], Benchmark]] = {
    "lshape": lshape,
    "heterogeneous": heterogeneous,
    "anisotropic-1e4": lambda: anisotropic(1e4),
    "anisotropic-1e6": lambda: anisotropic(1e6),
    "eriksson-johnson": eriksson_johnson,
    "burgers-isotropic": burgers_isotropic,
    "burgers-single-1e-2": lambda: burgers_single(1e-2),
    "burgers-single-1e-3": lambda: burgers_single(1e-3),
    "burgers-single-1e-4": lambda: burgers_single(1e-4),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(REGISTRY)}") from None


# ---------------------------------------------------------------------------


def compute_errors(sol, benchmark: Benchmark | ProblemDef) -> dict:
    """L2 and energy-norm errors of the coarse, full, adjoint and dG solutions.

    Keys are ``L2_coarse``, ``Vh_coarse``, ``L2_full`` and so on; solutions
    that were not computed are omitted.
    """
    problem = benchmark.problem if isinstance(benchmark, Benchmark) else benchmark
    if problem.exact is None or problem.exact_grad is None:
        raise ValueError("benchmark has no exact solution")
    disc = sol.disc
    V = disc.broken
    out = {}
    for key, vec in (("coarse", sol.coarse_broken), ("full", sol.full), ("adjoint", sol.adjoint_full), ("dg", sol.theta)):
        if vec is None:
            continue
        out[f"L2_{key}"] = forms.l2_error(V, vec, problem.exact)
        out[f"Vh_{key}"] = forms.energy_norm(
            V, problem, vec, problem.exact, problem.exact_grad, disc.kappa, disc.gram_norm, disc.diffusion_term
        )
    return out
