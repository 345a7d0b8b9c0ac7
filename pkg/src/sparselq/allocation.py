"""
Cost allocation from sweep results.

The social payoff is the energy the cooperative design saves over the
decoupled game, the selfish payoffs are what each agent saves in the
coupled game. The Nash bargaining split gives every agent its selfish
payoff plus an equal share ``xi`` of the cooperation surplus; the network
cost is then split in proportion to the allocated payoffs.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateAllocation
from .game import GameConfig, GameResult, coalition_game, decoupled_nash
from .objective import AgentWeights, DesignWeights
from .system import AgentPartition, LtiSystem

__all__ = [
    "SweepPoint",
    "AllocationReport",
    "CoalitionOutcome",
    "monotone_envelope",
    "allocate",
    "star_payoffs",
    "coalition_efficiency_check",
]

DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class SweepPoint:
    """Energies at one budget ``s``.

    ``J_soc`` is the (monotone corrected) social energy, ``J_C`` the
    agents' energies at the coupled Nash point and ``J_C_total`` their sum.
    """

    s: int
    J_soc: float
    J_C: Tuple[float, ...]
    J_C_total: Optional[float] = None
    feasible: bool = True

    def __post_init__(self):
        object.__setattr__(self, "J_C", tuple(float(x) for x in self.J_C))
        if self.J_C_total is None:
            object.__setattr__(self, "J_C_total", float(sum(self.J_C)))


@dataclass(frozen=True)
class AllocationReport:
    s: int
    v_soc: float
    v: Tuple[float, ...]
    alpha: Tuple[float, ...]
    xi: float
    C: Tuple[float, ...]
    bargaining_success: bool
    degenerate: bool = False

    @property
    def negative_payoffs(self) -> Tuple[int, ...]:
        """Agents whose selfish payoff is negative."""
        return tuple(i for i, x in enumerate(self.v) if x < 0)


def monotone_envelope(series: Sequence[Tuple[int, float]]) -> List[Tuple[int, float]]:
    """Running minimum over ascending ``s``.

    >>> monotone_envelope([(0, 5.0), (1, 4.0), (2, 4.5), (3, 3.0)])
    [(0, 5.0), (1, 4.0), (2, 4.0), (3, 3.0)]
    """
    s_vals = [int(s) for s, _ in series]
    if any(b <= a for a, b in zip(s_vals, s_vals[1:])):
        raise ValueError("series must be sorted by strictly increasing s")
    out, best = [], np.inf
    for s, J in series:
        best = min(best, float(J))
        out.append((int(s), best))
    return out


def allocate(dne: Sequence[float], point: SweepPoint, allow_degenerate=False) -> AllocationReport:
    """Bargaining payoffs and proportional cost shares at one sweep point.

    Parameters
    ----------
    dne : sequence of float
        Agents' energies ``J_i^D`` at the decoupled Nash point.
    point : SweepPoint
    allow_degenerate : bool
        Return a report with NaN shares instead of raising when the
        allocated payoffs do not sum to a positive value.
    """
    J_D = np.asarray(dne, dtype=float)
    J_C = np.asarray(point.J_C, dtype=float)
    if J_D.shape != J_C.shape:
        raise ValueError(f"{J_D.size} decoupled energies for {J_C.size} agents")
    if not point.feasible:
        raise ValueError(f"sweep point s={point.s} is infeasible")
    values = np.concatenate([J_D, J_C, [point.J_soc]])
    if not np.all(np.isfinite(values)):
        raise ValueError("allocation inputs must be finite")
    r = J_D.size
    J_D_total = float(J_D.sum())
    v_soc = J_D_total - float(point.J_soc)
    v = J_D - J_C
    xi = (v_soc - float(v.sum())) / r
    alpha = v + xi
    total = float(alpha.sum())
    degenerate = total <= DEGENERATE_REL * max(1.0, abs(J_D_total))
    if degenerate and not allow_degenerate:
        raise DegenerateAllocation(
            f"allocated payoffs sum to {total:.3e} at s={point.s}; cost shares undefined")
    C = np.full(r, np.nan) if degenerate else alpha / total
    return AllocationReport(
        s=int(point.s), v_soc=v_soc, v=tuple(v.tolist()), alpha=tuple(alpha.tolist()),
        xi=float(xi), C=tuple(C.tolist()), bargaining_success=bool(v_soc >= v.sum()),
        degenerate=bool(degenerate),
    )


def star_payoffs(dne: Sequence[float], series: Sequence[SweepPoint]) -> List[List[float]]:
    """Payoffs against the best coupled energy seen so far, one list per agent.

    ``v_i*(s) = J_i^D - min over s' <= s of J_i^C(s')``; nondecreasing in ``s``.
    """
    J_D = np.asarray(dne, dtype=float)
    s_vals = [p.s for p in series]
    if any(b <= a for a, b in zip(s_vals, s_vals[1:])):
        raise ValueError("series must be sorted by strictly increasing s")
    if not series:
        return [[] for _ in J_D]
    J_C = np.array([p.J_C for p in series], dtype=float)
    if J_C.shape[1] != J_D.size:
        raise ValueError("agent count mismatch")
    best = np.minimum.accumulate(J_C, axis=0)
    return [(J_D[i] - best[:, i]).tolist() for i in range(J_D.size)]


@dataclass
class CoalitionOutcome:
    partition: Tuple[Tuple[int, ...], ...]
    values: Tuple[float, ...]
    converged: bool
    game: GameResult

    @property
    def total(self) -> float:
        return float(sum(self.values))


def _canonical(rho):
    groups = tuple(sorted(tuple(sorted(int(i) for i in S)) for S in rho))
    return groups


def coalition_efficiency_check(system: LtiSystem, part: AgentPartition, aw: AgentWeights,
                               partitions, s: int, opts=None, w: Optional[DesignWeights] = None,
                               dne: Optional[Sequence[float]] = None, tol=1e-8):
    """Compare the grand-coalition value with each coalition structure.

    For a partition ``rho`` of the agents, every coalition ``S`` plays as
    one selfish player with weight ``sum_{i in S} Q_i``; its value is
    ``sum_{i in S} J_i^D - J_S(K_rho)``. Returns ``(grand, outcomes,
    holds)`` where ``holds[k]`` tells whether ``v(N) >= sum_S v(S) - tol``
    for ``partitions[k]``; entries are ``None`` when either game failed to
    converge.
    """
    part.check(system)
    if w is not None and not aw.sum_matches_social(w):
        raise ValueError("agent weights do not add up to the social weights")
    cfg_kw = {} if opts is None else {"opts": opts}
    if dne is None:
        dne = decoupled_nash(system, part, aw, **({} if opts is None else {"opts": opts})).player_values
    dne = np.asarray(dne, dtype=float)

    def play(rho):
        rho = _canonical(rho)
        g = coalition_game(system, part, aw, rho, GameConfig(s, **cfg_kw))
        vals = tuple(float(dne[list(S)].sum() - J) for S, J in zip(rho, g.player_values))
        return CoalitionOutcome(rho, vals, g.converged, g)

    grand = play([range(part.r)])
    outcomes, holds = [], []
    for rho in partitions:
        out = play(rho)
        outcomes.append(out)
        if out.converged and grand.converged:
            holds.append(bool(grand.total >= out.total - tol))
        else:
            holds.append(None)
    return grand, outcomes, holds
