"""
Round-robin support-pursuit loop shared by the centralized solver and the
games. The centralized solver is the one-player case.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import LineSearchFailed, NoStabilizingIterate, NotDescent, UnstableClosedLoop
from .kernels import spectral_abscissa
from .objective import Objective, ObjectiveEvaluation
from .system import STABILITY_MARGIN, LtiSystem, card_off, support, top_s_mask


@dataclass(frozen=True)
class ArmijoParams:
    c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 50

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.c <= 0 or self.max_backtracks < 0:
            raise ValueError("invalid Armijo parameters")


@dataclass(frozen=True)
class SolverOptions:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    eps_polish: float = 1e-4
    armijo: ArmijoParams = ArmijoParams()
    max_outer_iters: int = 500
    stability_margin: float = STABILITY_MARGIN
    cg_tol: float = 1e-8
    cg_max_iter: Optional[int] = None
    damping: float = 1.0
    damping_floor: float = 1e-6

    def __post_init__(self):
        if self.damping < 0 or self.damping_floor < 0:
            raise ValueError("damping must be nonnegative")
        for name in ("eps_abs", "eps_rel", "eps_polish", "stability_margin", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")

    @classmethod
    def for_games(cls, **kw):
        kw.setdefault("eps_polish", 1e-3)
        kw.setdefault("max_outer_iters", 300)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d, games=False):
        d = dict(d or {})
        if "armijo" in d and isinstance(d["armijo"], dict):
            d["armijo"] = ArmijoParams(**d["armijo"])
        return cls.for_games(**d) if games else cls(**d)


@dataclass
class IterationRecord:
    iteration: int
    J: List[float]
    card_off: int
    step_sizes: List[float]
    backtracked: bool
    phase: str = "pursuit"


@dataclass
class BroadcastRecord:
    """A player's published strategy after a move.

    ``rows_value`` holds the player's full row block so that replaying
    the log from the initial gain reproduces every intermediate K exactly.
    """

    round: int
    player: int
    phase: str
    rows: tuple
    rows_value: np.ndarray
    added: tuple
    removed: tuple
    card_off: int


@dataclass
class EngineOutcome:
    K: np.ndarray
    rounds: int
    pursuit_converged: bool
    reverted: bool
    polish_sweeps: int
    polish_converged: bool
    grad_norms: List[float]
    values: List[float]
    abscissa: float
    trace: List[IterationRecord] = field(default_factory=list)
    log: List[BroadcastRecord] = field(default_factory=list)
    message: str = ""


def armijo(obj: Objective, K, delta, ev: ObjectiveEvaluation, g, params: ArmijoParams,
           margin=STABILITY_MARGIN):
    """Backtracking search; returns ``(lam, K_new, ev_new)``."""
    slope = float(np.sum(g * delta[obj.rows]))
    if not slope < 0:
        raise NotDescent(f"directional derivative {slope:.3e} is not negative")
    J0 = ev.value
    lam = 1.0
    for _ in range(params.max_backtracks + 1):
        K_try = K + lam * delta
        try:
            ev_try = obj.evaluate(K_try, margin)
        except UnstableClosedLoop:
            ev_try = None
        if ev_try is not None and ev_try.value <= J0 + params.c * lam * slope:
            return lam, K_try, ev_try
        lam *= params.shrink
    raise LineSearchFailed(f"no sufficient decrease after {params.max_backtracks} backtracks")


_MU_MIN, _MU_MAX = 1e-10, 1e10
_STALL_REL, _STALL_SWEEPS = 1e-13, 10


def _adapt(mu, lam):
    # Levenberg-Marquardt style: relax after a full step, tighten otherwise
    if mu == 0.0:
        return 0.0
    return max(mu / 4.0, _MU_MIN) if lam >= 1.0 else min(mu * 4.0, _MU_MAX)


def _stable(system, K, margin):
    return spectral_abscissa(system.A - system.B @ K) < -margin


def _row_card(system, K, rows):
    return int(np.count_nonzero(support(K[rows]) & ~system.diag_mask[rows]))


def _record(log, rnd, i, phase, rows, K_before, K_after, system):
    before = support(K_before[rows])
    after = support(K_after[rows])
    added = tuple(zip(*np.nonzero(after & ~before)))
    removed = tuple(zip(*np.nonzero(before & ~after)))
    log.append(BroadcastRecord(
        rnd, i, phase, tuple(int(r) for r in rows), K_after[rows].copy(),
        tuple((int(rows[a]), int(b)) for a, b in added),
        tuple((int(rows[a]), int(b)) for a, b in removed),
        _row_card(system, K_after, rows),
    ))


def replay(K0, log: Sequence[BroadcastRecord]):
    """Rebuild K by applying each broadcast in order."""
    K = np.array(K0, dtype=float, copy=True)
    for rec in log:
        K[list(rec.rows)] = rec.rows_value
    return K


def run(system: LtiSystem, players: Sequence[Objective], s: int, K0, opts: SolverOptions,
        initial_budgets: Optional[Sequence[int]] = None, polish_only=False) -> EngineOutcome:
    """Support pursuit (skipped when ``polish_only``) followed by polishing."""
    s = int(s)
    if s < 0:
        raise ValueError("s must be nonnegative")
    margin = opts.stability_margin
    K = np.array(K0, dtype=float, copy=True)
    if K.shape != (system.q, system.m):
        raise ValueError(f"K0 has shape {K.shape}")
    if not _stable(system, K, margin):
        raise NoStabilizingIterate("initial gain is not stabilizing")
    r = len(players)
    if initial_budgets is None:
        initial_budgets = [s] + [0] * (r - 1)
    qm = system.q * system.m
    sqrt_qm = np.sqrt(qm)
    log: List[BroadcastRecord] = []
    trace: List[IterationRecord] = []
    # last stable iterate satisfying the budget; reverted to when a prune destabilizes
    fallback = K.copy() if card_off(K, system) <= s else None
    mus = [float(opts.damping)] * r

    # with no links allowed or present, pursuit steps are plain polishing steps
    if s == 0 and card_off(K, system) == 0:
        polish_only = True
    rounds = 0
    pursuit_converged = polish_only
    reverted = False
    message = ""
    if not polish_only:
        for it in range(opts.max_outer_iters):
            rounds = it + 1
            K_prev = K.copy()
            steps, backtracked = [], False
            for i, p in enumerate(players):
                others = card_off(K, system) - _row_card(system, K, p.rows)
                if it == 0 and i == 0:
                    s_i = min(int(initial_budgets[0]), s - others)
                else:
                    s_i = s - others
                s_i = max(s_i, 0)
                ev = p.evaluate(K, margin)
                g = p.gradient(K, ev)
                pursuit = top_s_mask(g, ~p.own_diag, 2 * s_i)
                T_rows = pursuit | support(K[p.rows]) | p.own_diag
                T = np.zeros((system.q, system.m), dtype=bool)
                T[p.rows] = T_rows
                step = p.newton_step(K, T, ev, tol=opts.cg_tol, max_iter=opts.cg_max_iter,
                                     damping=mus[i], damping_floor=opts.damping_floor)
                K_before = K.copy()
                try:
                    lam, K, _ = armijo(p, K, step.direction, ev, g, opts.armijo, margin)
                    backtracked |= lam < 1.0
                except (NotDescent, LineSearchFailed):
                    lam = 0.0
                steps.append(lam)
                mus[i] = _adapt(step.damping, lam)
                # prune the player's off-diagonal entries to its budget
                rows = K[p.rows]
                keep = p.own_diag | top_s_mask(rows, ~p.own_diag, s_i)
                K[p.rows] = np.where(keep, rows, 0.0)
                if not _stable(system, K, margin):
                    if fallback is None:
                        raise NoStabilizingIterate(
                            f"pruning to {s_i} links destabilized player {i} with no fallback")
                    K = fallback.copy()
                    reverted = True
                    message = f"prune destabilized player {i} in round {rounds}; reverted"
                    for j, q in enumerate(players):
                        _record(log, rounds, j, "revert", q.rows, K_before, K, system)
                    break
                fallback = K.copy()
                _record(log, rounds, i, "pursuit", p.rows, K_before, K, system)
            trace.append(IterationRecord(
                rounds, [q.evaluate(K, margin).value for q in players],
                card_off(K, system), steps, backtracked))
            if reverted:
                break
            delta = np.linalg.norm(K - K_prev)
            if delta < opts.eps_abs * sqrt_qm + opts.eps_rel * np.linalg.norm(K_prev):
                pursuit_converged = True
                break
        if not pursuit_converged and not reverted:
            message = f"support pursuit hit {opts.max_outer_iters} rounds"

    # polishing on the frozen supports
    masks = []
    for p in players:
        m = np.zeros((system.q, system.m), dtype=bool)
        m[p.rows] = support(K[p.rows]) | p.own_diag
        masks.append(m)

    def norms_at(K):
        out = []
        for p, m in zip(players, masks):
            g = p.gradient(K, p.evaluate(K, margin))
            out.append(float(np.linalg.norm(np.where(m[p.rows], g, 0.0))) / sqrt_qm)
        return out

    sweeps = 0
    flat = 0
    J_last = [p.evaluate(K, margin).value for p in players]
    norms = norms_at(K)
    polish_converged = all(n < opts.eps_polish for n in norms)
    while not polish_converged and sweeps < opts.max_outer_iters:
        sweeps += 1
        progress = False
        steps = []
        for i, (p, m) in enumerate(zip(players, masks)):
            ev = p.evaluate(K, margin)
            g = p.gradient(K, ev)
            if np.linalg.norm(np.where(m[p.rows], g, 0.0)) / sqrt_qm < opts.eps_polish:
                continue
            step = p.newton_step(K, m, ev, tol=opts.cg_tol, max_iter=opts.cg_max_iter,
                                 damping=mus[i], damping_floor=opts.damping_floor)
            K_before = K.copy()
            try:
                lam, K, _ = armijo(p, K, step.direction, ev, g, opts.armijo, margin)
            except (NotDescent, LineSearchFailed):
                steps.append(0.0)
                mus[i] = _adapt(step.damping, 0.0)
                progress |= mus[i] < _MU_MAX
                continue
            steps.append(lam)
            mus[i] = _adapt(step.damping, lam)
            progress = True
            _record(log, rounds + sweeps, i, "polish", p.rows, K_before, K, system)
        norms = norms_at(K)
        polish_converged = all(n < opts.eps_polish for n in norms)
        J_now = [q.evaluate(K, margin).value for q in players]
        trace.append(IterationRecord(
            rounds + sweeps, J_now, card_off(K, system), steps,
            any(x < 1.0 for x in steps), "polish"))
        # typically a minimizer pinned at the stability margin
        gain = max(a - b for a, b in zip(J_last, J_now))
        flat = flat + 1 if gain <= _STALL_REL * max(abs(a) for a in J_now) else 0
        J_last = J_now
        if not progress or flat >= _STALL_SWEEPS:
            message = (message + "; " if message else "") + "polishing stalled"
            break

    if not polish_converged and not polish_only and card_off(K0, system) <= s:
        # a minimizer pinned at the stability margin fails the stationarity test;
        # fall back to the polished initial gain when that one is stationary
        alt = run(system, players, s, K0, opts, polish_only=True)
        if alt.polish_converged:
            K_start = np.array(K0, dtype=float)
            for j, q in enumerate(players):
                _record(log, rounds + sweeps, j, "revert", q.rows, K, K_start, system)
            offset = rounds + sweeps
            for rec in alt.log:
                rec.round += offset
                log.append(rec)
            for rec in alt.trace:
                rec.iteration += offset
                trace.append(rec)
            note = "polished gain not stationary; returned the polished initial gain"
            return EngineOutcome(
                K=alt.K, rounds=rounds, pursuit_converged=pursuit_converged, reverted=True,
                polish_sweeps=sweeps + alt.polish_sweeps, polish_converged=True,
                grad_norms=alt.grad_norms, values=alt.values, abscissa=alt.abscissa,
                trace=trace, log=log, message=(message + "; " if message else "") + note,
            )

    values = [p.evaluate(K, margin).value for p in players]
    return EngineOutcome(
        K=K, rounds=rounds, pursuit_converged=pursuit_converged, reverted=reverted,
        polish_sweeps=sweeps, polish_converged=polish_converged, grad_norms=norms,
        values=values, abscissa=spectral_abscissa(system.A - system.B @ K),
        trace=trace, log=log, message=message,
    )
