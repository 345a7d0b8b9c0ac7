"""
Dense linear-algebra kernels.

Continuous Lyapunov equations are solved Bartels-Stewart style: the
closed-loop matrix is reduced once to real Schur form and the resulting
quasi-triangular Sylvester equation is handed to LAPACK ``trsyl``.
:class:`LyapunovSolver` keeps the Schur factors so that repeated solves
against the same matrix (gradient, Hessian-vector products) cost only the
back-substitution.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.linalg.lapack import dtrsyl

from .errors import (
    EigenFailure,
    IllConditioned,
    NotHurwitz,
    NotStabilizable,
    NumericalFailure,
)

__all__ = [
    "LyapunovSolver",
    "solve_lyapunov",
    "solve_care",
    "spectral_abscissa",
    "LinearOperator",
    "CGResult",
    "cg_solve",
]

LEFT = "left-transpose"
RIGHT = "right-transpose"

# backward-error bound used to flag a Lyapunov solve as untrustworthy
_LYAP_RESIDUAL_TOL = 1e-8
_CARE_RESIDUAL_TOL = 1e-8


def _as_square(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


class LyapunovSolver:
    """Cached real-Schur factorization of a Hurwitz matrix.

    ``left(W)`` returns X with ``A^T X + X A + W = 0`` and ``right(W)``
    returns X with ``A X + X A^T + W = 0``.
    """

    def __init__(self, A):
        A = _as_square(A, "A")
        try:
            T, U = linalg.schur(A, output="real")
        except (linalg.LinAlgError, ValueError) as exc:
            raise EigenFailure(str(exc)) from exc
        self.A = A
        self.T = T
        self.U = U
        # in standardized real Schur form the 2x2 blocks carry the real
        # part of their complex pair on the diagonal
        self.abscissa = float(np.max(np.diag(T))) if A.size else -np.inf

    def _solve(self, W, trana, tranb):
        U = self.U
        C = -(U.T @ W @ U)
        Y, scale, info = dtrsyl(self.T, self.T, C, trana=trana, tranb=tranb, isgn=1)
        if info < 0:
            raise NumericalFailure(f"trsyl argument {-info} invalid")
        if info == 1:
            raise IllConditioned("Lyapunov operator is (nearly) singular")
        X = U @ (Y / scale) @ U.T
        return 0.5 * (X + X.T)

    def left(self, W):
        return self._solve(W, "T", "N")

    def right(self, W):
        return self._solve(W, "N", "T")


def lyapunov_residual(A, X, W, side=LEFT):
    if side == LEFT:
        return A.T @ X + X @ A + W
    return A @ X + X @ A.T + W


def solve_lyapunov(A_cl, W, side=LEFT, margin=0.0):
    """Solve a continuous Lyapunov equation for a Hurwitz ``A_cl``.

    Parameters
    ----------
    A_cl : (n, n) array_like
        Closed-loop matrix; must have spectral abscissa below ``-margin``.
    W : (n, n) array_like
        Symmetric forcing term.
    side : {"left-transpose", "right-transpose"}
        ``left-transpose`` solves ``A^T X + X A + W = 0``;
        ``right-transpose`` solves ``A X + X A^T + W = 0``.

    Raises
    ------
    NotHurwitz
        If ``A_cl`` is not strictly stable.
    IllConditioned
        If the backward error of the computed solution is too large.
    """
    A_cl = _as_square(A_cl, "A_cl")
    W = _as_square(W, "W")
    if W.shape != A_cl.shape:
        raise ValueError("A_cl and W must have the same shape")
    if side not in (LEFT, RIGHT):
        raise ValueError(f"unknown side {side!r}")
    solver = LyapunovSolver(A_cl)
    if not solver.abscissa < -margin:
        raise NotHurwitz(f"spectral abscissa {solver.abscissa:.3e} is not negative")
    X = solver.left(W) if side == LEFT else solver.right(W)
    res = np.linalg.norm(lyapunov_residual(A_cl, X, W, side))
    scale = np.linalg.norm(W) + 2.0 * np.linalg.norm(A_cl) * np.linalg.norm(X)
    if res > _LYAP_RESIDUAL_TOL * max(scale, np.finfo(float).tiny):
        raise IllConditioned(f"Lyapunov residual {res:.3e} (scale {scale:.3e})")
    return X


def spectral_abscissa(M):
    """Largest real part over the eigenvalues of ``M``."""
    M = _as_square(M, "M")
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return float(np.max(ev.real))


def _is_stabilizable(A, B, tol=1e-9):
    # PBH test on the closed right half-plane eigenvalues
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A), np.linalg.norm(B))
    for lam in np.linalg.eigvals(A):
        if lam.real < -tol * scale:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] <= tol * scale * 10:
            return False
    return True


def _care_residual(A, B, Q, R, P):
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def _kleinman(A, B, Q, R, K, max_iter=50, tol=1e-13):
    """Newton-Kleinman iterations from a stabilizing gain ``K``."""
    P = None
    for _ in range(max_iter):
        Acl = A - B @ K
        P_new = solve_lyapunov(Acl, Q + K.T @ R @ K, LEFT)
        K = np.linalg.solve(R, B.T @ P_new)
        if P is not None and np.linalg.norm(P_new - P) <= tol * max(1.0, np.linalg.norm(P_new)):
            P = P_new
            break
        P = P_new
    return P, K


def _bass_gain(A, B):
    # Bass' method: K = B^T X^{-1} with (A + bI) X + X (A + bI)^T = 2 B B^T
    beta = max(0.0, spectral_abscissa(A)) + 1.0 + np.linalg.norm(A, 2)
    Ab = A + beta * np.eye(A.shape[0])
    X = linalg.solve_continuous_lyapunov(Ab, 2.0 * B @ B.T)
    return B.T @ np.linalg.solve(X, np.eye(A.shape[0]))


def solve_care(A, B, Q, R):
    """Stabilizing solution of ``A^T P + P A - P B R^{-1} B^T P + Q = 0``.

    Returns ``(P, K)`` with ``K = R^{-1} B^T P``. The invariant-subspace
    (Hamiltonian pencil) solution from SciPy is tried first; if it fails or
    its residual is poor, Newton-Kleinman refinement takes over.
    """
    A = _as_square(A, "A")
    Q = _as_square(Q, "Q")
    R = _as_square(R, "R")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != A.shape[0] or Q.shape != A.shape or R.shape[0] != B.shape[1]:
        raise ValueError("inconsistent CARE dimensions")
    if not _is_stabilizable(A, B):
        raise NotStabilizable("(A, B) has an uncontrollable unstable mode")

    def acceptable(P):
        if P is None or not np.all(np.isfinite(P)):
            return False
        res = np.linalg.norm(_care_residual(A, B, Q, R, P))
        scale = np.linalg.norm(Q) + 2 * np.linalg.norm(A) * np.linalg.norm(P) + \
            np.linalg.norm(P @ B) ** 2 / max(np.linalg.norm(R, -2), 1e-300)
        return res <= _CARE_RESIDUAL_TOL * max(scale, 1.0)

    P = None
    try:
        P = linalg.solve_continuous_are(A, B, Q, R)
    except (linalg.LinAlgError, ValueError):
        P = None
    if P is not None:
        P = 0.5 * (P + P.T)
        K = np.linalg.solve(R, B.T @ P)
        if spectral_abscissa(A - B @ K) < 0 and acceptable(P):
            # one refinement sweep tightens the residual essentially for free
            P2, K2 = _kleinman(A, B, Q, R, K, max_iter=2)
            if acceptable(P2) and spectral_abscissa(A - B @ K2) < 0:
                return P2, K2
            return P, K
        K0 = K if spectral_abscissa(A - B @ K) < 0 else _bass_gain(A, B)
    else:
        K0 = _bass_gain(A, B)
    try:
        P, K = _kleinman(A, B, Q, R, K0)
    except (NotHurwitz, IllConditioned) as exc:
        raise NumericalFailure(f"Kleinman refinement failed: {exc}") from exc
    if not acceptable(P) or spectral_abscissa(A - B @ K) >= 0:
        raise NumericalFailure("CARE residual above tolerance")
    return P, K


@dataclass(frozen=True)
class LinearOperator:
    """A linear map on R^dimension given by ``apply``."""

    dimension: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.apply(x)


@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    converged: bool
    negative_curvature: bool
    iterations: int
    residual_norm: float


def cg_solve(op, rhs, tol=1e-8, max_iter: Optional[int] = None, curv_tol=0.0) -> CGResult:
    """Conjugate gradients for a symmetric operator, starting from zero.

    Stops with ``negative_curvature=True`` (returning the current iterate)
    as soon as a search direction has ``p^T op(p) <= curv_tol * ||p||^2``. When ``max_iter``
    is exhausted the iterate with the smallest residual is returned with
    ``converged=False``.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if isinstance(op, LinearOperator) and op.dimension != n:
        raise ValueError(f"operator dimension {op.dimension} != rhs length {n}")
    if max_iter is None:
        max_iter = 4 * n
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(x, True, False, 0, 0.0)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    best_x, best_res = x.copy(), bnorm
    target = tol * bnorm
    for k in range(1, max_iter + 1):
        Ap = np.asarray(op(p), dtype=float)
        curv = p @ Ap
        if curv <= curv_tol * (p @ p):
            return CGResult(x, False, True, k, float(np.sqrt(rr)))
        alpha = rr / curv
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = r @ r
        res = np.sqrt(rr_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= target:
            return CGResult(x, True, False, k, float(res))
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(best_x, False, False, max_iter, float(best_res))
