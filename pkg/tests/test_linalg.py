import numpy as np
import pytest
import scipy.sparse as sp

from resmin.linalg import SaddleSystem, SolverError, factorize, solve_saddle, solve_spd, solve_square


def random_spd(n, rng):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def test_spd_identity():
    b = np.arange(5.0)
    assert np.allclose(solve_spd(sp.eye(5), b), b)


def test_spd_hand_case():
    assert np.allclose(solve_spd(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), [3.0, 3.0]), [1.0, 1.0])


def test_spd_zero_rhs():
    G = sp.csr_matrix(random_spd(6, np.random.default_rng(0)))
    assert np.all(solve_spd(G, np.zeros(6)) == 0)


def test_spd_rejects_indefinite():
    with pytest.raises(SolverError):
        solve_spd(sp.diags([1.0, -1.0, 2.0]), np.ones(3))


def test_square_identity_and_zero():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(solve_square(sp.eye(3), b), b)
    assert np.all(solve_square(sp.csr_matrix([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2)) == 0)


def test_square_upper_triangular():
    U = sp.csr_matrix([[2.0, 1.0, -1.0], [0.0, 3.0, 2.0], [0.0, 0.0, 4.0]])
    # back substitution by hand: x3 = 1, x2 = (7 - 2) / 3, x1 = (3 - 5/3 + 1) / 2
    x = solve_square(U, [3.0, 7.0, 4.0])
    assert np.allclose(x, [7 / 6, 5 / 3, 1.0])


def test_square_dense_oracle():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((10, 10)) + 5 * np.eye(10)
    b = rng.standard_normal(10)
    assert np.allclose(solve_square(sp.csr_matrix(A), b), np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)


def test_singular_matrix_raises():
    with pytest.raises(SolverError):
        solve_square(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), [1.0, 0.0])


def test_factorization_reuse():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((8, 8)) + 4 * np.eye(8)
    f = factorize(sp.csr_matrix(A))
    for _ in range(3):
        b = rng.standard_normal(8)
        assert np.allclose(A @ f.solve(b), b)


def test_saddle_dense_oracle():
    rng = np.random.default_rng(3)
    n, m = 10, 4
    G = random_spd(n, rng)
    B = rng.standard_normal((n, m))
    rhs = rng.standard_normal(n)
    eps, u = solve_saddle(SaddleSystem(sp.csr_matrix(G), sp.csr_matrix(B), rhs))
    K = np.block([[G, B], [B.T, np.zeros((m, m))]])
    x = np.linalg.solve(K, np.concatenate([rhs, np.zeros(m)]))
    assert np.allclose(eps, x[:n], rtol=1e-10, atol=1e-12)
    assert np.allclose(u, x[n:], rtol=1e-10, atol=1e-12)
    # second block: the residual representative is orthogonal to range(B)
    assert np.abs(B.T @ eps).max() < 1e-10


def test_saddle_square_trial_space_gives_zero_residual():
    rng = np.random.default_rng(4)
    G = random_spd(6, rng)
    B = rng.standard_normal((6, 6)) + 3 * np.eye(6)
    rhs = rng.standard_normal(6)
    eps, u = solve_saddle(SaddleSystem(sp.csr_matrix(G), sp.csr_matrix(B), rhs))
    assert np.abs(eps).max() < 1e-10
    assert np.allclose(u, np.linalg.solve(B, rhs))


def test_saddle_zero_load():
    rng = np.random.default_rng(5)
    G, B = random_spd(7, rng), rng.standard_normal((7, 3))
    eps, u = solve_saddle(SaddleSystem(sp.csr_matrix(G), sp.csr_matrix(B), np.zeros(7)))
    assert np.all(eps == 0) and np.all(u == 0)


def test_saddle_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SaddleSystem(sp.eye(3), sp.csr_matrix(np.ones((4, 2))), np.zeros(3))
