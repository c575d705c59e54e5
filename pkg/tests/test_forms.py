from dataclasses import replace

import numpy as np
import pytest

from resmin import forms
from resmin.fem import BROKEN, build_space, interpolate
from resmin.forms import DIRICHLET, NEUMANN, NonlinearForm, ProblemDef
from resmin.mesh import build_mesh, rectangle_mesh, refine
from resmin.problems import burgers_isotropic, polynomial

ETA_P1 = 3 * (2 + np.sqrt(2)) / 0.5  # 20.4853


def unit_triangle(tag="b"):
    return build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], {(0, 1): tag, (1, 2): tag, (2, 0): tag})


def zeros(p):
    return np.zeros(np.shape(p)[:-1])


def ones(p):
    return np.ones(np.shape(p)[:-1])


def diffusion(kappa=1.0, kind=DIRICHLET, **kw):
    return ProblemDef(kappa=forms.constant_tensor(kappa), boundary={"b": kind}, **kw)


# -- weights and penalties ---------------------------------------------------


def test_weights_equal_scalar_diffusion():
    w1, w2, g = forms.diffusion_weights(2.0, 2.0, [0.6, 0.8])
    assert (w1, w2) == pytest.approx((0.5, 0.5))
    assert g == pytest.approx(2.0)


def test_weights_hand_values():
    w1, w2, g = forms.diffusion_weights(1.0, 3.0, [1.0, 0.0])
    assert (w1, w2, g) == pytest.approx((0.25, 0.75, 1.5))


def test_anisotropy_invisible_to_normal():
    K = np.diag([1.0, 1e6])
    _, _, g = forms.diffusion_weights(K, K, [1.0, 0.0])
    assert g == pytest.approx(1.0)


def test_weights_reject_zero_diffusion():
    with pytest.raises(ValueError):
        forms.diffusion_weights(0.0, 1.0, [1.0, 0.0])


def test_penalty_boundary_face():
    assert forms.penalty_eta_e([(0.5, 2 + np.sqrt(2))], 1) == pytest.approx(20.4853, abs=1e-4)


def test_penalty_interior_face_congruent_cells():
    g = (0.5, 2 + np.sqrt(2))
    assert forms.penalty_eta_e([g, g], 1) == pytest.approx(ETA_P1)


def test_penalty_degree_factor():
    g = [(0.5, 2 + np.sqrt(2))]
    assert forms.penalty_eta_e(g, 2) == pytest.approx(2 * forms.penalty_eta_e(g, 1))


def test_face_penalties_match_scalar_formula():
    m = rectangle_mesh(2, 2)
    V = build_space(m, 1)
    fv = V.face_values("interior")
    assert np.allclose(forms.face_penalties(V, fv), 2 * ETA_P1)  # legs of 1/2


# -- SWIP ----------------------------------------------------------------------


def test_swip_zero_diffusion():
    V = build_space(rectangle_mesh(2, 2), 2)
    prob = replace(diffusion(0.0), boundary={t: DIRICHLET for t in ("left", "right", "bottom", "top")})
    A = forms.assemble_swip(V, prob)
    assert abs(A).max() == 0


def test_swip_single_triangle_stiffness():
    V = build_space(unit_triangle(), 1)
    A = forms.assemble_swip(V, diffusion(1.0, NEUMANN)).toarray()
    assert np.allclose(A, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]))


def test_swip_symmetric_heterogeneous():
    m = refine(rectangle_mesh(3, 3), [0, 4, 7])

    def kappa(x):
        K = np.zeros(np.shape(x)[:-1] + (2, 2))
        K[..., 0, 0] = np.where(x[..., 0] < 0.5, 0.1, 2.0)
        K[..., 1, 1] = 1.0 + x[..., 1]
        K[..., 0, 1] = K[..., 1, 0] = 0.05
        return K

    prob = ProblemDef(kappa=kappa, boundary={t: DIRICHLET for t in ("left", "right", "bottom", "top")})
    for p in (1, 2, 3):
        A = forms.assemble_swip(build_space(m, p), prob)
        assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_swip_kills_constants_without_dirichlet():
    V = build_space(rectangle_mesh(2, 2), 2)
    prob = ProblemDef(kappa=forms.constant_tensor(1.0), boundary={t: NEUMANN for t in ("left", "right", "bottom", "top")})
    A = forms.assemble_swip(V, prob)
    assert np.abs(A @ np.ones(V.num_dofs)).max() < 1e-12


def test_cell_kappa_rejects_indefinite():
    V = build_space(unit_triangle(), 1)
    with pytest.raises(ValueError):
        forms.cell_kappa(V, diffusion(np.diag([1.0, -1.0])))


# -- upwind --------------------------------------------------------------------


def test_upwind_zero_velocity():
    V = build_space(rectangle_mesh(2, 2), 1)
    prob = diffusion(1.0, beta=forms.constant_vector([0.0, 0.0]))
    assert abs(forms.assemble_upwind(V, prob)).max() == 0


def test_upwind_constant_function_sees_only_inflow():
    m = rectangle_mesh(2, 2)
    V = build_space(m, 2)
    beta = np.array([1.0, 0.5])
    prob = ProblemDef(
        kappa=forms.constant_tensor(0.0),
        beta=forms.constant_vector(beta),
        boundary={t: DIRICHLET for t in ("left", "right", "bottom", "top")},
    )
    got = forms.assemble_upwind(V, prob) @ np.ones(V.num_dofs)
    # -(v, beta.n) on the inflow boundary, assembled by hand
    fvb = V.face_values("boundary")
    bn = fvb.normals @ beta
    want = np.zeros(V.num_dofs)
    for f in np.flatnonzero(bn < 0):
        dofs = V.dof_map[fvb.cells[f, 0]]
        np.add.at(want, dofs, -bn[f] * fvb.weights[f] @ fvb.phi[f, 0])
    assert np.allclose(got, want)


def test_upwind_volume_term_single_triangle():
    beta = np.array([1.0, 2.0])
    V = build_space(unit_triangle(), 1)
    prob = ProblemDef(kappa=forms.constant_tensor(0.0), beta=forms.constant_vector(beta), boundary={"b": NEUMANN})
    A = forms.assemble_upwind(V, prob).toarray()
    fvb = V.face_values("boundary")
    inflow = np.zeros((3, 3))
    for f in range(3):
        bn = fvb.normals[f] @ beta
        if bn < 0:
            inflow -= bn * np.einsum("q,qi,qj->ij", fvb.weights[f], fvb.phi[f, 0], fvb.phi[f, 0])
    grads = np.array([[-1, -1], [1, 0], [0, 1]], dtype=float)
    # (v_i, beta . grad phi_j) = area / 3 * beta . grad phi_j
    volume = np.tile(grads @ beta / 6, (3, 1))
    assert np.allclose(A - inflow, volume)


# -- Gram matrix and energy norm ---------------------------------------------


def test_gram_hand_value():
    V = build_space(unit_triangle(), 1)
    G = forms.assemble_gram(V, diffusion(1.0, beta=forms.constant_vector([0.0, 0.0])))
    w = np.ones(3)
    assert w @ G @ w == pytest.approx(0.5 + ETA_P1 * (2 + np.sqrt(2)))
    assert w @ G @ w == pytest.approx(70.44, abs=5e-3)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_gram_spd_and_matches_quadrature(p):
    m = refine(rectangle_mesh(2, 2), [2])
    V = build_space(m, p)
    prob = polynomial([[0.0]], kappa=0.1, beta=(1.0, -0.5))
    G = forms.assemble_gram(V, prob)
    assert abs(G - G.T).max() < 1e-12 * abs(G).max()
    assert np.linalg.eigvalsh(G.toarray()).min() > 0
    rng = np.random.default_rng(p)
    for _ in range(3):
        w = rng.standard_normal(V.num_dofs)
        assert np.sqrt(w @ G @ w) == pytest.approx(forms.energy_norm(V, prob, w), rel=1e-11)


def test_energy_norm_of_interpolated_polynomial_error_vanishes():
    c = np.array([[0.2, 1.0, -0.5], [0.3, 0.4, 0.0], [1.0, 0.0, 0.0]])
    prob = polynomial(c)
    V = build_space(rectangle_mesh(2, 2), 2)
    u = interpolate(prob.exact, V)
    assert forms.energy_norm(V, prob, u, prob.exact, prob.exact_grad) < 1e-10
    assert forms.l2_error(V, u, prob.exact) < 1e-10


def test_l2_error_unit():
    V = build_space(rectangle_mesh(2, 2), 1)
    assert forms.l2_error(V, np.zeros(V.num_dofs), ones) == pytest.approx(1.0)


# -- load vector ---------------------------------------------------------------


def test_rhs_zero_data():
    V = build_space(rectangle_mesh(2, 2), 2)
    prob = diffusion(1.0, source=zeros, dirichlet=zeros)
    prob = replace(prob, boundary={t: DIRICHLET for t in ("left", "right", "bottom", "top")})
    assert np.all(forms.assemble_rhs(V, prob) == 0)


def test_rhs_unit_source():
    V = build_space(unit_triangle(), 1)
    b = forms.assemble_rhs(V, diffusion(1.0, NEUMANN, source=ones))
    assert np.allclose(b, 1 / 6)


def test_rhs_neumann_unit_edge():
    m = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], {(0, 1): "n", (1, 2): "z", (2, 0): "z"})
    V = build_space(m, 1)
    prob = ProblemDef(kappa=forms.constant_tensor(1.0), boundary={"n": NEUMANN, "z": NEUMANN},
                      neumann=lambda x: np.where(x[..., 1] == 0, 1.0, 0.0))
    assert np.allclose(forms.assemble_rhs(V, prob), [0.5, 0.5, 0.0])


@pytest.mark.parametrize("p", [1, 2, 3])
def test_linear_consistency(p):
    rng = np.random.default_rng(10 + p)
    c = np.triu(rng.uniform(-1, 1, (p + 1, p + 1)))[:, ::-1]  # total degree <= p
    prob = polynomial(c, kappa=1.0, beta=(1.0, 1.0))
    V = build_space(refine(rectangle_mesh(2, 2), [1]), p)
    B = forms.assemble_swip(V, prob) + forms.assemble_upwind(V, prob)
    r = B @ interpolate(prob.exact, V) - forms.assemble_rhs(V, prob)
    assert np.abs(r).max() < 1e-10


# -- Lax-Friedrichs flux -------------------------------------------------------

B11 = np.array([1.0, 1.0])


def burgers_flux(u):
    return 0.5 * np.asarray(u)[..., None] ** 2 * B11


def burgers_dflux(u):
    return np.asarray(u)[..., None] * B11


def test_lf_consistency():
    phi, _ = forms.lax_friedrichs_flux(0.7, 0.7, [0.6, 0.8], burgers_flux, burgers_dflux)
    assert phi == pytest.approx(0.5 * 0.49 * 1.4)


def test_lf_hand_value():
    phi, eta = forms.lax_friedrichs_flux(1.0, 0.0, [1.0, 0.0], burgers_flux, burgers_dflux)
    assert eta == pytest.approx(1.0)
    assert phi == pytest.approx(0.75)


def test_lf_linear_flux_dissipation():
    beta = np.array([2.0, -1.0])
    n = np.array([0.6, 0.8])
    for u1, u2 in ((0.0, 3.0), (-5.0, 1.0)):
        _, eta = forms.lax_friedrichs_flux(u1, u2, n, lambda u: np.asarray(u)[..., None] * beta,
                                           lambda u: np.ones(np.shape(u))[..., None] * beta)
        assert eta == pytest.approx(abs(beta @ n))


def test_lf_vertical_face_single_component():
    flux = lambda u: np.stack([0.5 * np.asarray(u) ** 2, np.asarray(u)], axis=-1)
    dflux = lambda u: np.stack([np.asarray(u), np.ones(np.shape(u))], axis=-1)
    _, eta = forms.lax_friedrichs_flux(-0.3, 0.8, [1.0, 0.0], flux, dflux)
    assert eta == pytest.approx(0.8)


# -- nonlinear residual and Jacobian -------------------------------------------


def linear_flux_pair(beta=(1.0, 1.0), kappa=1.0, coeffs=((0.3, -1.0), (2.0, 0.0))):
    lin = polynomial(np.array(coeffs), kappa=kappa, beta=beta)
    b = np.asarray(beta)
    nonlin = replace(
        lin,
        flux=lambda u: np.asarray(u)[..., None] * b,
        dflux=lambda u: np.ones(np.shape(u))[..., None] * b,
        d2flux=lambda u: np.zeros(np.shape(u))[..., None] * b,
    )
    return lin, nonlin


def test_linear_flux_residual_equals_upwind_assembly():
    lin, nonlin = linear_flux_pair()
    V = build_space(refine(rectangle_mesh(2, 2), [3]), 2)
    B = forms.assemble_swip(V, lin) + forms.assemble_upwind(V, lin)
    ell = forms.assemble_rhs(V, lin)
    form = NonlinearForm(V, nonlin)
    u = np.random.default_rng(0).standard_normal(V.num_dofs)
    assert np.allclose(form.residual(u), B @ u - ell, atol=1e-12)
    assert abs(form.jacobian(u) - B).max() < 1e-12
    assert abs(form.jacobian(2 * u + 1) - B).max() < 1e-12


def test_residual_of_manufactured_solution_vanishes():
    _, nonlin = linear_flux_pair(coeffs=((0.3, -1.0, 0.5), (2.0, 0.2, 0.0), (1.0, 0.0, 0.0)))
    V = build_space(rectangle_mesh(2, 2), 2)
    r = NonlinearForm(V, nonlin).residual(interpolate(nonlin.exact, V))
    assert np.abs(r).max() < 1e-10


def test_residual_zero_data():
    prob = replace(burgers_isotropic().problem, source=zeros, dirichlet=zeros)
    V = build_space(rectangle_mesh(2, 2), 2)
    assert np.abs(NonlinearForm(V, prob).residual(np.zeros(V.num_dofs))).max() == 0


@pytest.mark.parametrize("p", [1, 2])
def test_jacobian_central_differences(p):
    prob = burgers_isotropic().problem
    V = build_space(rectangle_mesh(2, 2), p)
    form = NonlinearForm(V, prob)
    rng = np.random.default_rng(p)
    h = 1e-6
    for _ in range(3):
        u = interpolate(prob.exact, V) + 0.3 * rng.standard_normal(V.num_dofs)
        d = rng.standard_normal(V.num_dofs)
        fd = (form.residual(u + h * d) - form.residual(u - h * d)) / (2 * h)
        jd = form.jacobian(u) @ d
        assert np.linalg.norm(fd - jd) <= 1e-5 * np.linalg.norm(jd)


def test_hessian_symmetric_and_matches_differences():
    prob = burgers_isotropic().problem
    V = build_space(rectangle_mesh(2, 2), 2)
    form = NonlinearForm(V, prob)
    rng = np.random.default_rng(4)
    u = 0.5 + 0.2 * rng.standard_normal(V.num_dofs)
    w, d = rng.standard_normal((2, V.num_dofs))
    H = form.hessian(u, w)
    assert abs(H - H.T).max() < 1e-12 * abs(H).max()
    h = 1e-6
    fd = (form.jacobian(u + h * d).T @ w - form.jacobian(u - h * d).T @ w) / (2 * h)
    assert np.linalg.norm(fd - H @ d) <= 1e-5 * np.linalg.norm(H @ d)


def test_burgers_jacobian_constant_state_single_triangle():
    # with outflow on every face the volume and face terms add up to
    # ubar (v_i, b . grad phi_j) by the divergence theorem
    ubar = 0.7
    prob = ProblemDef(kappa=forms.constant_tensor(0.0), boundary={"b": NEUMANN}, neumann=zeros,
                      flux=burgers_flux, dflux=burgers_dflux, d2flux=lambda u: np.ones(np.shape(u))[..., None] * B11)
    V = build_space(unit_triangle(), 1)
    J = NonlinearForm(V, prob).jacobian(np.full(3, ubar)).toarray()
    grads = np.array([[-1, -1], [1, 0], [0, 1]], dtype=float)
    assert np.allclose(J, ubar * np.tile(grads @ B11 / 6, (3, 1)))


def test_residual_rejects_non_finite():
    prob = burgers_isotropic().problem
    V = build_space(rectangle_mesh(2, 2), 1)
    u = np.zeros(V.num_dofs)
    u[0] = np.inf
    with pytest.raises(FloatingPointError):
        NonlinearForm(V, prob).residual(u)
