"""
Centralized sparsity-constrained LQR: minimize the social energy J(K)
subject to at most ``s`` communication links (off-diagonal-block nonzeros).

Each outer iteration enlarges the support of K along the ``2s`` largest
off-diagonal gradient entries, takes a restricted Newton step with Armijo
backtracking, and prunes back to ``s`` links. A final polishing phase runs
restricted Newton steps on the frozen support until the projected gradient
is small.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _engine
from ._engine import ArmijoParams, IterationRecord, SolverOptions
from .errors import NoStabilizingInit, UnstableClosedLoop
from .kernels import solve_care
from .objective import DesignWeights, Objective
from .system import LtiSystem, block_project, card_off, is_stabilizing

__all__ = [
    "ArmijoParams",
    "SolverOptions",
    "SolveResult",
    "initial_gain",
    "armijo_search",
    "grasp_minimize",
    "polish",
]


@dataclass
class SolveResult:
    K: np.ndarray
    J: float
    converged: bool
    iterations: int
    abscissa: float
    trace: List[IterationRecord] = field(default_factory=list)
    polish_iterations: int = 0
    pursuit_converged: bool = True
    reverted: bool = False
    grad_norm: float = float("nan")
    message: str = ""


def initial_gain(system: LtiSystem, w: DesignWeights, part=None) -> np.ndarray:
    """Diagonal blocks of the dense LQR gain, if they stabilize on their own."""
    _, K_dense = solve_care(system.A, system.B, w.Q, w.R)
    K0 = block_project(K_dense, system, "diag")
    if not is_stabilizing(system, K0):
        raise NoStabilizingInit(
            "block-diagonal part of the dense LQR gain is not stabilizing; supply K0")
    return K0


def armijo_search(obj: Objective, K, delta, opts: Optional[SolverOptions] = None) -> float:
    """Largest ``shrink**k`` step giving sufficient decrease and stability."""
    opts = opts or SolverOptions()
    ev = obj.evaluate(K, opts.stability_margin)
    g = obj.gradient(K, ev)
    lam, _, _ = _engine.armijo(obj, np.asarray(K, dtype=float), np.asarray(delta, dtype=float),
                               ev, g, opts.armijo, opts.stability_margin)
    return lam


def _result(out: _engine.EngineOutcome, system) -> SolveResult:
    return SolveResult(
        K=out.K, J=out.values[0], converged=out.polish_converged,
        iterations=out.rounds, abscissa=out.abscissa, trace=out.trace,
        polish_iterations=out.polish_sweeps, pursuit_converged=out.pursuit_converged,
        reverted=out.reverted, grad_norm=out.grad_norms[0], message=out.message,
    )


def grasp_minimize(system: LtiSystem, w: DesignWeights, s: int, K0=None,
                   opts: Optional[SolverOptions] = None) -> SolveResult:
    """Minimize J(K) subject to ``card_off(K) <= s``.

    ``K0`` defaults to :func:`initial_gain`. ``converged`` reports whether
    the polished gain meets ``||grad J on supp(K)||_F / sqrt(qm) < eps_polish``.
    """
    opts = opts or SolverOptions()
    if K0 is None:
        K0 = initial_gain(system, w)
    obj = Objective.social(system, w)
    out = _engine.run(system, [obj], s, K0, opts)
    return _result(out, system)


def polish(obj: Objective, system: LtiSystem, K, opts: Optional[SolverOptions] = None) -> SolveResult:
    """Restricted Newton descent on the frozen support of ``K``."""
    opts = opts or SolverOptions()
    if not is_stabilizing(system, K, opts.stability_margin):
        raise UnstableClosedLoop("polish needs a stabilizing gain")
    out = _engine.run(system, [obj], card_off(K, system), K, opts, polish_only=True)
    return _result(out, system)
