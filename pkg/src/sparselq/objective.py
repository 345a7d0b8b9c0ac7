"""
Closed-loop LQR energies, their gradients and restricted Newton steps.

Every objective here has the same shape: a player owning a subset of the
rows of K (all rows for the social objective) is charged

    J(K) = integral of x' Qw x + u_own' Rw u_own,   x(0+) = D,

along the impulse response of ``x' = (A - B K) x``. With

    (A-BK)' P + P (A-BK) + Qw + K_own' Rw K_own = 0
    (A-BK) L + L (A-BK)' + D D' = 0

the energy is ``trace(D' P D)`` and the gradient with respect to the
player's rows is ``2 (Rw K_own - B_own' P) L``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UnstableClosedLoop
from .kernels import LyapunovSolver, cg_solve, LinearOperator
from .system import STABILITY_MARGIN, AgentPartition, LtiSystem

__all__ = [
    "DesignWeights",
    "AgentWeights",
    "ObjectiveEvaluation",
    "Objective",
    "NewtonStep",
    "social_value",
    "social_gradient",
    "selfish_value",
    "selfish_gradient",
    "restricted_newton_step",
    "projected_gradient_norm",
]

_SYM_TOL = 1e-12
_MAX_SHIFTS = 30


def _sym_checked(M, name, definite):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, np.abs(M).max()) if M.size else 1.0
    if not np.allclose(M, M.T, rtol=0, atol=_SYM_TOL * scale):
        raise ValueError(f"{name} is not symmetric")
    M = 0.5 * (M + M.T)
    if M.size:
        lo = np.linalg.eigvalsh(M).min()
        if definite and lo <= 0:
            raise ValueError(f"{name} is not positive definite (min eig {lo:.3e})")
        if not definite and lo < -1e-10 * scale:
            raise ValueError(f"{name} is not positive semidefinite (min eig {lo:.3e})")
    return M


@dataclass(frozen=True, eq=False)
class DesignWeights:
    """Social weights: ``Q`` (m x m, PSD) and ``R`` (q x q, PD)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _sym_checked(self.Q, "Q", definite=False))
        object.__setattr__(self, "R", _sym_checked(self.R, "R", definite=True))


@dataclass(frozen=True, eq=False)
class AgentWeights:
    """Per-agent weights ``Q_i`` (m x m) and ``R_i`` (N_i x N_i)."""

    Q: tuple
    R: tuple

    def __post_init__(self):
        if len(self.Q) != len(self.R):
            raise ValueError("need one Q_i and one R_i per agent")
        object.__setattr__(
            self, "Q", tuple(_sym_checked(Q, f"Q[{i}]", False) for i, Q in enumerate(self.Q))
        )
        object.__setattr__(
            self, "R", tuple(_sym_checked(R, f"R[{i}]", True) for i, R in enumerate(self.R))
        )

    @property
    def r(self):
        return len(self.Q)

    def check(self, system: LtiSystem, part: AgentPartition):
        if self.r != part.r:
            raise ValueError(f"{self.r} agent weights for {part.r} agents")
        for i, (Q, R) in enumerate(zip(self.Q, self.R)):
            if Q.shape != (system.m, system.m):
                raise ValueError(f"Q[{i}] has shape {Q.shape}")
            N = len(part.input_rows(system, i))
            if R.shape != (N, N):
                raise ValueError(f"R[{i}] has shape {R.shape}, expected {(N, N)}")

    def social(self) -> DesignWeights:
        """``(sum Q_i, blkdiag R_i)``."""
        from scipy.linalg import block_diag

        return DesignWeights(sum(self.Q), block_diag(*self.R))

    def sum_matches_social(self, w: DesignWeights, tol=1e-10) -> bool:
        """Whether ``sum Q_i = Q`` and ``R = blkdiag(R_i)`` hold to ``tol``."""
        soc = self.social()
        return (
            soc.Q.shape == w.Q.shape
            and soc.R.shape == w.R.shape
            and np.abs(soc.Q - w.Q).max() <= tol
            and np.abs(soc.R - w.R).max() <= tol
        )


@dataclass(frozen=True, eq=False)
class ObjectiveEvaluation:
    value: float
    P: np.ndarray
    L: np.ndarray
    closed_loop: np.ndarray
    abscissa: float
    solver: LyapunovSolver


@dataclass(frozen=True)
class NewtonStep:
    direction: np.ndarray
    negative_curvature: bool
    cg_iterations: int
    cg_converged: bool
    damping: float = 0.0


class Objective:
    """LQR energy charged to one player.

    Parameters
    ----------
    system : LtiSystem
    rows : sequence of int
        Rows of K (inputs) the player controls.
    Q : (m, m) array
        State weight.
    R : (len(rows), len(rows)) array
        Weight on the player's own inputs.
    """

    def __init__(self, system: LtiSystem, rows, Q, R, label="social"):
        self.system = system
        self.rows = np.asarray(rows, dtype=int)
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.label = label
        if self.Q.shape != (system.m, system.m):
            raise ValueError(f"Q has shape {self.Q.shape}")
        if self.R.shape != (len(self.rows), len(self.rows)):
            raise ValueError(f"R has shape {self.R.shape}")
        self.B_own = system.B[:, self.rows]
        self.DDt = system.D @ system.D.T
        self.own_diag = system.diag_mask[self.rows]

    @classmethod
    def social(cls, system: LtiSystem, w: DesignWeights):
        return cls(system, np.arange(system.q), w.Q, w.R, "social")

    @classmethod
    def selfish(cls, system, part: AgentPartition, aw: AgentWeights, i: int):
        rows = part.input_rows(system, i)
        return cls(system, rows, aw.Q[i], aw.R[i], f"agent{i}")

    @classmethod
    def social_player(cls, system, part, w: DesignWeights, i: int):
        """Agent ``i`` holding its own rows but scored by the social energy."""
        rows = part.input_rows(system, i)
        obj = cls(system, np.arange(system.q), w.Q, w.R, f"social@{i}")
        return obj.restricted_to(rows)

    def restricted_to(self, rows):
        """Same energy, but only ``rows`` are the player's decision variables.

        The weight on the other rows' inputs stays in the state weight so
        that the value is unchanged.
        """
        return _RowRestricted(self, rows)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, K, margin=STABILITY_MARGIN) -> ObjectiveEvaluation:
        K = np.asarray(K, dtype=float)
        Acl = self.system.A - self.system.B @ K
        solver = LyapunovSolver(Acl)
        if not solver.abscissa < -margin:
            raise UnstableClosedLoop(f"closed-loop abscissa {solver.abscissa:.3e}")
        P = solver.left(self._state_weight(K))
        L = solver.right(self.DDt)
        D = self.system.D
        value = float((D.T @ P @ D)[0, 0])
        return ObjectiveEvaluation(value, P, L, Acl, solver.abscissa, solver)

    def _state_weight(self, K):
        Kr = K[self.rows]
        return self.Q + Kr.T @ self.R @ Kr

    def value(self, K) -> float:
        return self.evaluate(K).value

    def gradient(self, K, ev: Optional[ObjectiveEvaluation] = None) -> np.ndarray:
        """Gradient with respect to the player's rows, shape ``(len(rows), m)``."""
        if ev is None:
            ev = self.evaluate(K)
        Kr = np.asarray(K, dtype=float)[self.rows]
        return 2.0 * (self.R @ Kr - self.B_own.T @ ev.P) @ ev.L

    def hessian_vector(self, K, ev: ObjectiveEvaluation, delta) -> np.ndarray:
        """Second derivative applied to ``delta`` (own-rows shaped).

        Obtained by differentiating both Lyapunov equations along ``delta``;
        costs two back-substitutions against the cached Schur form.
        """
        K = np.asarray(K, dtype=float)
        Kr = K[self.rows]
        P, L = ev.P, ev.L
        BD = self.B_own @ delta
        RKd = delta.T @ self.R @ Kr
        dP = ev.solver.left(-(BD.T @ P + P @ BD) + RKd + RKd.T)
        BDL = BD @ L
        dL = ev.solver.right(-(BDL + BDL.T))
        return 2.0 * ((self.R @ delta - self.B_own.T @ dP) @ L + (self.R @ Kr - self.B_own.T @ P) @ dL)

    def embed(self, block) -> np.ndarray:
        """Place an own-rows block into a full ``(q, m)`` zero matrix."""
        full = np.zeros((self.system.q, self.system.m))
        full[self.rows] = block
        return full

    def newton_step(self, K, support, ev=None, tol=1e-8, max_iter=None,
                    damping=0.0, damping_floor=0.0) -> NewtonStep:
        """Restricted Newton direction on ``support`` (a ``(q, m)`` mask).

        Solves ``(H + damping I) d = -g`` on the support by CG. With a
        positive ``damping`` the shift is raised tenfold until CG sees no
        nonpositive curvature; the shift used is returned. With zero
        damping a nonpositive curvature stop keeps the partial CG iterate,
        or the negative gradient if there is none. ``damping_floor`` is a
        lower bound on the shift relative to the Hessian scale ``||H g|| / ||g||``.
        """
        if ev is None:
            ev = self.evaluate(K)
        g = self.gradient(K, ev)
        own = np.asarray(support, dtype=bool)[self.rows]
        idx = np.flatnonzero(own.ravel())
        if idx.size == 0 or not np.any(g.ravel()[idx]):
            return NewtonStep(np.zeros((self.system.q, self.system.m)), False, 0, True, damping)
        shape = g.shape
        rhs = -g.ravel()[idx]

        def hvp(v):
            d = np.zeros(g.size)
            d[idx] = v
            return self.hessian_vector(K, ev, d.reshape(shape)).ravel()[idx]

        # curvature below round-off level of the Hessian counts as nonpositive
        scale = np.linalg.norm(hvp(rhs)) / np.linalg.norm(rhs)
        mu = max(float(damping), damping_floor * scale)
        curv_tol = 1e-10 * max(scale, mu)
        iters = 0
        for _ in range(_MAX_SHIFTS):
            op = LinearOperator(idx.size, lambda v, mu=mu: hvp(v) + mu * v)
            res = cg_solve(op, rhs, tol=tol, max_iter=max_iter, curv_tol=curv_tol)
            iters += res.iterations
            if not (res.negative_curvature and mu > 0):
                break
            mu *= 10.0
        step = np.zeros(g.size)
        if res.negative_curvature and (mu > 0 or not np.any(res.x)):
            step[idx] = rhs
        else:
            step[idx] = res.x
        return NewtonStep(self.embed(step.reshape(shape)), res.negative_curvature,
                          iters, res.converged, mu)


class _RowRestricted(Objective):
    # the full objective scored on all inputs, differentiated on a row subset
    def __init__(self, base: Objective, rows):
        self.system = base.system
        self.base = base
        self.rows = np.asarray(rows, dtype=int)
        self.label = base.label
        self.B_own = self.system.B[:, self.rows]
        self.DDt = base.DDt
        self.own_diag = self.system.diag_mask[self.rows]
        # position of own rows inside the base player's rows
        lookup = {int(r): k for k, r in enumerate(base.rows)}
        self._pos = np.array([lookup[int(r)] for r in self.rows], dtype=int)
        self.R = base.R[np.ix_(self._pos, self._pos)]
        self.Q = base.Q

    def _state_weight(self, K):
        return self.base._state_weight(K)

    def gradient(self, K, ev=None):
        if ev is None:
            ev = self.evaluate(K)
        Kb = np.asarray(K, dtype=float)[self.base.rows]
        return 2.0 * (self.base.R[self._pos] @ Kb - self.B_own.T @ ev.P) @ ev.L

    def hessian_vector(self, K, ev, delta):
        K = np.asarray(K, dtype=float)
        Kb = K[self.base.rows]
        Rb = self.base.R
        P, L = ev.P, ev.L
        BD = self.B_own @ delta
        # d(Kb' Rb Kb) with dKb nonzero only on own rows
        RKd = delta.T @ Rb[self._pos] @ Kb
        dP = ev.solver.left(-(BD.T @ P + P @ BD) + RKd + RKd.T)
        BDL = BD @ L
        dL = ev.solver.right(-(BDL + BDL.T))
        dG_own = Rb[np.ix_(self._pos, self._pos)] @ delta
        return 2.0 * ((dG_own - self.B_own.T @ dP) @ L
                      + (Rb[self._pos] @ Kb - self.B_own.T @ P) @ dL)


def projected_gradient_norm(grad, mask_rows) -> float:
    """``||grad restricted to mask||_F``."""
    return float(np.linalg.norm(np.where(mask_rows, grad, 0.0)))


# -- functional surface ------------------------------------------------------

def social_value(system, w: DesignWeights, K) -> ObjectiveEvaluation:
    return Objective.social(system, w).evaluate(K)


def social_gradient(system, w: DesignWeights, K) -> np.ndarray:
    return Objective.social(system, w).gradient(K)


def selfish_value(system, part, aw: AgentWeights, i, K) -> ObjectiveEvaluation:
    return Objective.selfish(system, part, aw, i).evaluate(K)


def selfish_gradient(system, part, aw: AgentWeights, i, K) -> np.ndarray:
    return Objective.selfish(system, part, aw, i).gradient(K)


def restricted_newton_step(obj: Objective, K, support) -> np.ndarray:
    """``(q, m)`` Newton direction of ``obj`` supported on ``support``.

    Undamped; a negative-curvature stop keeps the partial CG iterate.
    """
    return obj.newton_step(K, support).direction
