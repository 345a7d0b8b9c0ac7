"""
Round-robin games over the rows of K under a global link budget.

Each agent owns the input rows of its nodes and, in turn, enlarges its
support along its own gradient, takes a restricted Newton step, prunes
its off-diagonal entries to the budget the others leave it and publishes
its new rows. Players either minimize their own energy (coupled Nash) or
the social energy (a potential game whose minimizers are Nash points).
With ``s = 0`` only local feedback is tuned (decoupled Nash).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from . import _engine
from ._engine import BroadcastRecord, IterationRecord, SolverOptions
from .errors import NoStabilizingInit
from .grasp import initial_gain
from .objective import AgentWeights, DesignWeights, Objective
from .system import AgentPartition, LtiSystem, block_project, is_stabilizing, support

__all__ = [
    "GameConfig",
    "GameResult",
    "proportional_budgets",
    "coupled_nash",
    "social_game",
    "decoupled_nash",
    "coalition_game",
    "replay_log",
]

MODES = ("selfish", "social")


def proportional_budgets(part: AgentPartition, s: int) -> Tuple[int, ...]:
    """Split ``s`` in proportion to node counts; leftovers go to the lowest indices."""
    s = int(s)
    if s < 0:
        raise ValueError("s must be nonnegative")
    n = np.asarray(part.node_counts)
    base = (s * n) // n.sum()
    base[: s - int(base.sum())] += 1
    return tuple(int(b) for b in base)


@dataclass(frozen=True)
class GameConfig:
    """Game settings.

    ``order`` permutes the round-robin sequence (ascending by default).
    ``initial_budgets`` defaults to :func:`proportional_budgets`.
    """

    s: int
    mode: str = "selfish"
    initial_budgets: Optional[Tuple[int, ...]] = None
    opts: SolverOptions = field(default_factory=SolverOptions.for_games)
    order: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if int(self.s) < 0:
            raise ValueError("s must be nonnegative")
        if self.initial_budgets is not None:
            b = tuple(int(x) for x in self.initial_budgets)
            if any(x < 0 for x in b) or sum(b) != int(self.s):
                raise ValueError("initial budgets must be nonnegative and sum to s")
            object.__setattr__(self, "initial_budgets", b)

    def budgets(self, part: AgentPartition):
        b = self.initial_budgets or proportional_budgets(part, self.s)
        if len(b) != part.r:
            raise ValueError(f"{len(b)} budgets for {part.r} agents")
        return b

    def player_order(self, r):
        order = tuple(range(r)) if self.order is None else tuple(int(i) for i in self.order)
        if sorted(order) != list(range(r)):
            raise ValueError(f"order {order} is not a permutation of 0..{r - 1}")
        return order


@dataclass
class GameResult:
    """Outcome of a game.

    ``player_values[i]`` is the objective of player ``i`` at ``K`` (the
    social energy for every player in social mode). ``J`` is the social
    energy in social mode and the sum of the players' energies otherwise.
    """

    K: np.ndarray
    player_values: List[float]
    J: float
    rounds: int
    converged: bool
    broadcast_log: List[BroadcastRecord]
    player_links: List[int]
    grad_norms: List[float]
    abscissa: float
    pursuit_converged: bool = True
    reverted: bool = False
    trace: List[IterationRecord] = field(default_factory=list)
    message: str = ""


def replay_log(K0, log: Sequence[BroadcastRecord]) -> np.ndarray:
    """Rebuild the gain from the initial gain and the broadcast log."""
    return _engine.replay(K0, log)


def _default_start(system, part, weights):
    w = weights.social() if isinstance(weights, AgentWeights) else weights
    return initial_gain(system, w, part)


def _play(system, players, rows_of, s, K0, opts, budgets, order, mode, polish_only=False):
    perm = [players[i] for i in order]
    out = _engine.run(system, perm, s, K0, opts,
                      initial_budgets=[budgets[i] for i in order], polish_only=polish_only)
    # engine indices follow the play order; report in agent order
    inv = np.argsort(order)
    for rec in out.log:
        rec.player = int(order[rec.player])
    values = [out.values[k] for k in inv]
    norms = [out.grad_norms[k] for k in inv]
    links = [int(np.count_nonzero(support(out.K[r]) & ~system.diag_mask[r]))
             for r in rows_of]
    J = values[0] if mode == "social" else float(sum(values))
    return GameResult(
        K=out.K, player_values=values, J=J, rounds=out.rounds,
        converged=out.polish_converged, broadcast_log=out.log, player_links=links,
        grad_norms=norms, abscissa=out.abscissa, pursuit_converged=out.pursuit_converged,
        reverted=out.reverted, trace=out.trace, message=out.message,
    )


def coupled_nash(system: LtiSystem, part: AgentPartition, aw: AgentWeights,
                 cfg: GameConfig, K0=None) -> GameResult:
    """Noncooperative game: player ``i`` minimizes its own energy ``J_i``."""
    if cfg.mode != "selfish":
        raise ValueError("coupled_nash needs mode='selfish'")
    part.check(system)
    aw.check(system, part)
    K0 = _default_start(system, part, aw) if K0 is None else np.asarray(K0, dtype=float)
    players = [Objective.selfish(system, part, aw, i) for i in range(part.r)]
    rows = [part.input_rows(system, i) for i in range(part.r)]
    return _play(system, players, rows, cfg.s, K0, cfg.opts, cfg.budgets(part),
                 cfg.player_order(part.r), "selfish")


def social_game(system: LtiSystem, part: AgentPartition, w: DesignWeights,
                cfg: GameConfig, K0=None) -> GameResult:
    """Distributed social optimization: every player descends the social energy."""
    if cfg.mode != "social":
        raise ValueError("social_game needs mode='social'")
    part.check(system)
    K0 = _default_start(system, part, w) if K0 is None else np.asarray(K0, dtype=float)
    players = [Objective.social_player(system, part, w, i) for i in range(part.r)]
    rows = [part.input_rows(system, i) for i in range(part.r)]
    return _play(system, players, rows, cfg.s, K0, cfg.opts, cfg.budgets(part),
                 cfg.player_order(part.r), "social")


def decoupled_nash(system: LtiSystem, part: AgentPartition, aw: AgentWeights,
                   opts: Optional[SolverOptions] = None, K0=None) -> GameResult:
    """Game without links: each player tunes only its local feedback blocks."""
    opts = opts or SolverOptions.for_games()
    part.check(system)
    aw.check(system, part)
    K0 = _default_start(system, part, aw) if K0 is None else np.asarray(K0, dtype=float)
    K0 = block_project(K0, system, "diag")
    if not is_stabilizing(system, K0, opts.stability_margin):
        raise NoStabilizingInit("no stabilizing block-diagonal gain to start from")
    players = [Objective.selfish(system, part, aw, i) for i in range(part.r)]
    rows = [part.input_rows(system, i) for i in range(part.r)]
    r = part.r
    return _play(system, players, rows, 0, K0, opts, (0,) * r, tuple(range(r)),
                 "selfish", polish_only=True)


def coalition_game(system: LtiSystem, part: AgentPartition, aw: AgentWeights,
                   coalitions: Sequence[Sequence[int]], cfg: GameConfig, K0=None) -> GameResult:
    """Selfish game between coalitions of agents acting as single players.

    Coalition ``S`` owns the rows of its members and minimizes the energy
    with ``Q_S = sum Q_i`` and ``R_S = blkdiag(R_i)`` over ``i`` in ``S``.
    ``player_values`` follow the order of ``coalitions``.
    """
    part.check(system)
    aw.check(system, part)
    groups = [tuple(sorted(int(i) for i in S)) for S in coalitions]
    if sorted(i for S in groups for i in S) != list(range(part.r)):
        raise ValueError("coalitions must partition the agents")
    K0 = _default_start(system, part, aw) if K0 is None else np.asarray(K0, dtype=float)
    players, rows = [], []
    for S in groups:
        r_S = np.concatenate([part.input_rows(system, i) for i in S])
        Q_S = sum(aw.Q[i] for i in S)
        R_S = block_diag(*[aw.R[i] for i in S])
        players.append(Objective(system, r_S, Q_S, R_S, "coalition" + "".join(map(str, S))))
        rows.append(r_S)
    nodes = AgentPartition(tuple(sum(part.node_counts[i] for i in S) for S in groups))
    budgets = cfg.initial_budgets or proportional_budgets(nodes, cfg.s)
    if len(budgets) != len(groups):
        raise ValueError(f"{len(budgets)} budgets for {len(groups)} coalitions")
    return _play(system, players, rows, cfg.s, K0, cfg.opts, budgets,
                 cfg.player_order(len(groups)), "selfish")
