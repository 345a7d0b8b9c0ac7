import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sparselq.errors import NotHurwitz, NotStabilizable
from sparselq.kernels import (LEFT, RIGHT, LinearOperator, LyapunovSolver, cg_solve,
                              solve_care, solve_lyapunov, spectral_abscissa)

from conftest import random_spd


def kron_lyapunov(A, W, side):
    # vec(A^T X + X A) = (I kron A^T + A^T kron I) vec(X), column-major vec
    n = A.shape[0]
    I = np.eye(n)
    M = np.kron(I, A.T) + np.kron(A.T, I) if side == LEFT else np.kron(I, A) + np.kron(A, I)
    x = np.linalg.solve(M, -W.ravel(order="F"))
    return x.reshape((n, n), order="F")


def hurwitz(rng, n, shift=0.3):
    A = rng.standard_normal((n, n))
    return A - (np.max(np.linalg.eigvals(A).real) + shift) * np.eye(n)


@pytest.mark.parametrize("side", [LEFT, RIGHT])
@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_lyapunov_matches_kronecker(rng, side, n):
    A = hurwitz(rng, n)
    W = random_spd(rng, n)
    X = solve_lyapunov(A, W, side)
    np.testing.assert_allclose(X, kron_lyapunov(A, W, side), rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(X, X.T, atol=0)


def test_lyapunov_solver_reuses_factorization(rng):
    A = hurwitz(rng, 6)
    solver = LyapunovSolver(A)
    for _ in range(3):
        W = random_spd(rng, 6)
        np.testing.assert_allclose(solver.left(W), kron_lyapunov(A, W, LEFT), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(solver.right(W), kron_lyapunov(A, W, RIGHT), rtol=1e-9, atol=1e-12)


def test_lyapunov_rejects_unstable():
    A = np.array([[0.1, 1.0], [0.0, -1.0]])
    with pytest.raises(NotHurwitz):
        solve_lyapunov(A, np.eye(2))
    with pytest.raises(NotHurwitz):
        solve_lyapunov(-np.eye(2), np.eye(2), margin=2.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-3, 3)))
def test_lyapunov_residual_property(M):
    A = M - (np.max(np.linalg.eigvals(M).real) + 0.5) * np.eye(4)
    W = np.eye(4)
    X = solve_lyapunov(A, W)
    res = A.T @ X + X @ A + W
    assert np.linalg.norm(res) <= 1e-9 * (1 + np.linalg.norm(A) * np.linalg.norm(X))
    # W > 0 and A Hurwitz give X > 0
    assert np.linalg.eigvalsh(X).min() > 0


def test_spectral_abscissa_against_mpmath():
    # companion matrix of x^3 + x^2 + 3x + 2
    A = np.array([[0, 1, 0], [0, 0, 1], [-2, -3, -1]], dtype=float)
    roots = mpmath.polyroots([1, 1, 3, 2], maxsteps=200, extraprec=60)
    expected = max(float(mpmath.re(z)) for z in roots)
    assert spectral_abscissa(A) == pytest.approx(expected, abs=1e-12)


def test_scalar_care_closed_form():
    # 2P - P^2 + 2 = 0 has the stabilizing root 1 + sqrt(3)
    P, K = solve_care(np.array([[1.0]]), np.array([[1.0]]), np.array([[2.0]]), np.array([[1.0]]))
    assert P[0, 0] == pytest.approx(1 + np.sqrt(3), rel=1e-14)
    assert K[0, 0] == pytest.approx(1 + np.sqrt(3), rel=1e-14)


def test_care_residual_and_stability(rng):
    n, q = 6, 2
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, q))
    Q, R = random_spd(rng, n), random_spd(rng, q)
    P, K = solve_care(A, B, Q, R)
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(P) * np.linalg.norm(A)
    assert spectral_abscissa(A - B @ K) < 0
    np.testing.assert_allclose(K, np.linalg.solve(R, B.T @ P), rtol=1e-12, atol=1e-12)


def test_care_optimality_against_perturbed_gains(rng):
    # x0' P x0 is the optimal cost, any other stabilizing gain costs more
    n = 4
    A, B = rng.standard_normal((n, n)), rng.standard_normal((n, 2))
    Q, R = np.eye(n), np.eye(2)
    P, K = solve_care(A, B, Q, R)
    for _ in range(5):
        K2 = K + 0.05 * rng.standard_normal(K.shape)
        if spectral_abscissa(A - B @ K2) >= 0:
            continue
        Acl = A - B @ K2
        P2 = solve_lyapunov(Acl, Q + K2.T @ R @ K2)
        assert np.linalg.eigvalsh(P2 - P).min() > -1e-10


def test_care_not_stabilizable():
    A = np.diag([1.0, -1.0])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(NotStabilizable):
        solve_care(A, B, np.eye(2), np.eye(1))


def test_cg_matches_dense_solve(rng):
    M = random_spd(rng, 12)
    b = rng.standard_normal(12)
    res = cg_solve(LinearOperator(12, lambda v: M @ v), b, tol=1e-12)
    assert res.converged and not res.negative_curvature
    np.testing.assert_allclose(res.x, np.linalg.solve(M, b), rtol=1e-9)


def test_cg_reports_negative_curvature():
    M = np.diag([1.0, 2.0, -1.0])
    b = np.ones(3)
    res = cg_solve(lambda v: M @ v, b)
    assert res.negative_curvature and not res.converged


def test_cg_curvature_threshold():
    M = np.diag([1e-12, 1e-12])
    b = np.ones(2)
    assert not cg_solve(lambda v: M @ v, b).negative_curvature
    assert cg_solve(lambda v: M @ v, b, curv_tol=1e-10).negative_curvature


def test_cg_zero_rhs():
    res = cg_solve(lambda v: v, np.zeros(4))
    assert res.converged and res.iterations == 0
    np.testing.assert_array_equal(res.x, 0.0)


def test_cg_dimension_check():
    with pytest.raises(ValueError):
        cg_solve(LinearOperator(3, lambda v: v), np.ones(4))
