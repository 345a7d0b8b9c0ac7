"""
Sweeps over the link budget and the reports built from them.

A run configuration (JSON) looks like::

    {
      "system": {"synthetic": {"n": 8, "seed": 1, "agents": [2, 2, 2, 2]}},
      "disturbance_node": 0,
      "sweep": [0, 1, 2, 4, 8, 16, "full"],
      "solvers": ["centralized", "social-game", "cne", "dne"],
      "options": {"eps_polish": 1e-4},
      "game_options": {},
      "cold_starts": false,
      "workers": 1,
      "out": "results"
    }

``system`` is ``{"file": path}``, ``{"inline": {...}}`` (see :mod:`sparselq.io`)
or ``{"synthetic": {...}}``. ``"full"`` in the sweep stands for the number
of off-diagonal entries of K.
"""

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import io as sio
from ._engine import SolverOptions
from .allocation import SweepPoint, allocate, monotone_envelope, star_payoffs
from .errors import InvalidConfig, MissingSolverData, SparseLQError, SystemFileError
from .game import GameConfig, coupled_nash, decoupled_nash, social_game
from .grasp import grasp_minimize
from .kernels import solve_care
from .objective import Objective
from .system import AgentPartition, LtiSystem, card_off
from .wac import SwingParams, synth_power_system, wac_weights

__all__ = [
    "SOLVERS",
    "RunConfig",
    "SweepRecord",
    "SweepArchive",
    "build_problem",
    "solve_point",
    "run_sweep",
    "assemble_points",
    "emit_report",
    "write_allocation",
]

SOLVERS = ("centralized", "social-game", "cne", "dne")
SOCIAL_SOLVERS = ("centralized", "social-game")


def _num(x) -> str:
    return format(float(x), ".17g")


def _bool(b) -> str:
    return "true" if b else "false"


# -- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    system: Dict[str, Any]
    sweep: Tuple[Any, ...] = (0, "full")
    solvers: Tuple[str, ...] = SOLVERS
    options: Dict[str, Any] = field(default_factory=dict)
    game_options: Dict[str, Any] = field(default_factory=dict)
    disturbance_node: Optional[int] = None
    cold_starts: bool = False
    workers: int = 1
    out: str = "results"
    base_dir: str = "."

    def __post_init__(self):
        if not isinstance(self.system, dict) or len(self.system) != 1 or \
                next(iter(self.system)) not in ("file", "inline", "synthetic"):
            raise InvalidConfig('system must be {"file": ...}, {"inline": ...} or {"synthetic": ...}')
        self.solvers = tuple(self.solvers)
        if not self.solvers:
            raise InvalidConfig("select at least one solver")
        bad = [x for x in self.solvers if x not in SOLVERS]
        if bad:
            raise InvalidConfig(f"unknown solvers {bad}; choose from {list(SOLVERS)}")
        self.sweep = tuple(self.sweep)
        for x in self.sweep:
            if x != "full" and (isinstance(x, bool) or not isinstance(x, int) or x < 0):
                raise InvalidConfig(f"sweep entries must be nonnegative integers or 'full', got {x!r}")
        if int(self.workers) < 1:
            raise InvalidConfig("workers must be >= 1")
        try:
            SolverOptions.from_dict(self.options)
            SolverOptions.from_dict(self.game_options, games=True)
        except (TypeError, ValueError) as e:
            raise InvalidConfig(f"bad solver options: {e}") from None

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise InvalidConfig("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config keys {sorted(extra)}")
        if "system" not in d:
            raise InvalidConfig("config needs a 'system' entry")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        d["sweep"] = list(self.sweep)
        d["solvers"] = list(self.solvers)
        return d

    def resolve_sweep(self, system: LtiSystem) -> List[int]:
        vals = [system.max_links if x == "full" else int(x) for x in self.sweep]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidConfig(f"sweep {vals} must be strictly increasing after resolving 'full'")
        return vals


def _synthetic(spec, disturbance_node):
    spec = dict(spec)
    agents = spec.pop("agents", None)
    if "params" in spec:
        params = SwingParams(**spec.pop("params"))
    else:
        kind = spec.pop("kind", "random")
        if kind not in ("random", "uniform"):
            raise InvalidConfig(f"synthetic kind must be 'random' or 'uniform', not {kind!r}")
        try:
            params = getattr(SwingParams, kind)(**spec)
            spec = {}
        except TypeError as e:
            raise InvalidConfig(f"synthetic system: {e}") from None
    if spec:
        raise InvalidConfig(f"unknown synthetic keys {sorted(spec)}")
    part = AgentPartition(tuple(agents) if agents is not None else (params.n,))
    system = synth_power_system(params, part, disturbance_node or 0)
    return system, part, "wac"


def _with_disturbance(system: LtiSystem, node: int):
    if not 0 <= node < system.n:
        raise InvalidConfig(f"disturbance node {node} out of range")
    mj = system.nodes[node][0]
    if mj < 2:
        raise InvalidConfig("disturbance node needs an acceleration (second) state")
    D = np.zeros((system.m, 1))
    D[system.state_offsets[node] + 1, 0] = 1.0
    return system.with_disturbance(D)


def build_problem(config: RunConfig):
    """``(system, partition, DesignWeights, AgentWeights)`` for a configuration."""
    kind, spec = next(iter(config.system.items()))
    if kind == "synthetic":
        system, part, weights = _synthetic(spec, config.disturbance_node)
    else:
        if kind == "file":
            system, part, weights = sio.load_system(Path(config.base_dir) / spec)
        else:
            system, part, weights = sio.system_from_dict(spec)
        if config.disturbance_node is not None:
            system = _with_disturbance(system, config.disturbance_node)
    if weights == "wac":
        if any(mj < 2 for mj, _ in system.nodes):
            raise SystemFileError("weights", '"wac" needs at least two states per node')
        w, aw = wac_weights(system, part)
    else:
        w, aw = weights
    return system, part, w, aw


# -- archive ---------------------------------------------------------------

@dataclass
class SweepRecord:
    solver: str
    s: int
    status: str  # ok | unconverged | failed
    J: float
    J_agents: Tuple[float, ...]
    card_off: int
    converged: bool
    start: str
    K: List[List[float]]
    message: str = ""
    wall_time: float = 0.0

    def gain(self, shape):
        return sio.gain_from_triplets(self.K, shape)


@dataclass
class SweepArchive:
    config: Dict[str, Any]
    system: Dict[str, Any]
    sweep: List[int]
    J_care: float
    records: List[SweepRecord]

    def select(self, solver) -> List[SweepRecord]:
        return [r for r in self.records if r.solver == solver]

    def problem(self):
        system, part, weights = sio.system_from_dict(self.system)
        return system, part, weights[0], weights[1]

    def to_dict(self):
        d = {
            "config": self.config, "system": self.system, "sweep": self.sweep,
            "J_care": self.J_care, "records": [asdict(r) for r in self.records],
        }
        for r in d["records"]:
            r["J_agents"] = list(r["J_agents"])
        return d

    @classmethod
    def from_dict(cls, d):
        recs = [SweepRecord(**{**r, "J_agents": tuple(r["J_agents"])}) for r in d["records"]]
        return cls(d["config"], d["system"], list(d["sweep"]), d["J_care"], recs)

    def save(self, path):
        sio.dump_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise MissingSolverData(f"no archive at {path}")
        return cls.from_dict(json.loads(path.read_text()))


# -- solving ---------------------------------------------------------------

def _energies(system, part, w, aw, K):
    J = Objective.social(system, w).value(K)
    Ji = tuple(Objective.selfish(system, part, aw, i).value(K) for i in range(part.r))
    return J, Ji


def solve_point(system, part, w, aw, solver, s, K0=None, opts=None, game_opts=None):
    """One solve; returns ``(K, converged, message)``."""
    opts = opts or SolverOptions()
    game_opts = game_opts or SolverOptions.for_games()
    if solver == "centralized":
        res = grasp_minimize(system, w, s, K0=K0, opts=opts)
        return res.K, res.converged, res.message
    if solver == "social-game":
        res = social_game(system, part, w, GameConfig(s, "social", opts=game_opts), K0=K0)
    elif solver == "cne":
        res = coupled_nash(system, part, aw, GameConfig(s, opts=game_opts), K0=K0)
    elif solver == "dne":
        res = decoupled_nash(system, part, aw, game_opts, K0=K0)
    else:
        raise InvalidConfig(f"unknown solver {solver!r}")
    return res.K, res.converged, res.message


def _attempt(problem, solver, s, K0, opts, game_opts, start):
    system, part, w, aw = problem
    t0 = time.perf_counter()
    try:
        K, conv, msg = solve_point(system, part, w, aw, solver, s, K0, opts, game_opts)
    except SparseLQError as e:
        return SweepRecord(solver, s, "failed", float("nan"), (float("nan"),) * part.r, -1,
                           False, start, [], f"{type(e).__name__}: {e}",
                           time.perf_counter() - t0), None
    J, Ji = _energies(system, part, w, aw, K)
    rec = SweepRecord(solver, s, "ok" if conv else "unconverged", J, Ji, card_off(K, system),
                      bool(conv), start, sio.gain_to_triplets(K), msg,
                      time.perf_counter() - t0)
    return rec, K


def _cold_task(args):
    return _attempt(*args)


def _pick(solver, candidates):
    ok = [c for c in candidates if c[0].status != "failed"]
    if not ok:
        return candidates[0]
    conv = [c for c in ok if c[0].converged] or ok
    if solver in SOCIAL_SOLVERS:
        return min(conv, key=lambda c: c[0].J)
    return conv[0]  # games: keep the protocol's warm start when it converged


def run_sweep(config: RunConfig, progress=None) -> SweepArchive:
    """Run every selected solver over the sweep.

    Each solver warm-starts from its own previous result (the first point
    starts from the block-diagonal part of the dense LQR gain). With
    ``cold_starts`` every point is also solved from that initial gain and
    the better converged candidate is kept; cold starts are independent and
    run on ``workers`` processes. Failures are recorded, never raised.
    """
    problem = build_problem(config)
    system, part, w, aw = problem
    sweep = config.resolve_sweep(system)
    opts = SolverOptions.from_dict(config.options)
    game_opts = SolverOptions.from_dict(config.game_options, games=True)
    _, K_care = solve_care(system.A, system.B, w.Q, w.R)
    J_care = Objective.social(system, w).value(K_care)
    chains = [x for x in SOLVERS if x in config.solvers and x != "dne"]

    cold = {}
    if config.cold_starts:
        tasks = [(solver, s) for solver in chains for s in sweep[1:]]
        args = [(problem, solver, s, None, opts, game_opts, "cold") for solver, s in tasks]
        if config.workers > 1 and args:
            with ProcessPoolExecutor(max_workers=int(config.workers)) as pool:
                results = list(pool.map(_cold_task, args))
        else:
            results = [_cold_task(a) for a in args]
        cold = dict(zip(tasks, results))

    records: List[SweepRecord] = []
    if "dne" in config.solvers:
        rec, _ = _attempt(problem, "dne", 0, None, opts, game_opts, "init")
        records.append(rec)
        if progress:
            progress(rec)
    for solver in chains:
        K_prev = None
        for s in sweep:
            start = "init" if K_prev is None else "warm"
            cands = [_attempt(problem, solver, s, K_prev, opts, game_opts, start)]
            if (solver, s) in cold:
                cands.append(cold[(solver, s)])
            rec, K = _pick(solver, cands)
            records.append(rec)
            if K is not None:
                K_prev = K
            if progress:
                progress(rec)

    cfg = config.to_dict()
    return SweepArchive(cfg, sio.system_to_dict(system, part, (w, aw)), sweep, J_care, records)


# -- reports ---------------------------------------------------------------

def assemble_points(archive: SweepArchive):
    """Sweep points for allocation plus the decoupled energies.

    Returns ``(dne, points, raw)`` where ``raw`` maps ``s`` to the best
    converged social energy before the monotone correction. A point is
    feasible when both a converged social solution and a converged
    coupled Nash solution exist.
    """
    dne = [r for r in archive.select("dne") if r.converged]
    if not dne:
        raise MissingSolverData("allocation needs a converged decoupled Nash record")
    cne = {r.s: r for r in archive.select("cne") if r.converged}
    if not archive.select("cne"):
        raise MissingSolverData("allocation needs coupled Nash records")
    social = {}
    for r in archive.records:
        if r.solver in SOCIAL_SOLVERS and r.converged:
            social[r.s] = min(social.get(r.s, np.inf), r.J)
    if not social:
        raise MissingSolverData("allocation needs centralized or social-game records")
    feasible = [s for s in archive.sweep if s in social and s in cne]
    env = dict(monotone_envelope([(s, social[s]) for s in feasible])) if feasible else {}
    points = []
    for s in archive.sweep:
        if s in env:
            points.append(SweepPoint(s, env[s], cne[s].J_agents))
        else:
            points.append(SweepPoint(s, float("nan"), (float("nan"),) * len(dne[0].J_agents),
                                     float("nan"), feasible=False))
    return list(dne[0].J_agents), points, social


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _agent_cols(prefix, r):
    return [f"{prefix}_{i + 1}" for i in range(r)]


def write_energies(archive: SweepArchive, out: Path):
    r = len(archive.system.get("agents", [1]))
    header = ["s", "solver", "J"] + _agent_cols("J", r) + ["card_off", "converged", "status", "start"]
    rows = []
    for rec in sorted(archive.records, key=lambda x: (SOLVERS.index(x.solver), x.s)):
        rows.append([rec.s, rec.solver, _num(rec.J)] + [_num(x) for x in rec.J_agents]
                    + [rec.card_off, _bool(rec.converged), rec.status, rec.start])
    _write_csv(out / "energies.csv", header, rows)


def write_allocation(archive: SweepArchive, out: Path):
    """Write ``allocation.csv`` and ``star_payoffs.csv``; returns the reports."""
    dne, points, _ = assemble_points(archive)
    r = len(dne)
    header = (["s", "v_soc"] + _agent_cols("v", r) + _agent_cols("alpha", r) + ["xi"]
              + _agent_cols("C", r) + ["bargaining_success"])
    rows, reports = [], []
    for p in points:
        if not p.feasible:
            continue
        rep = allocate(dne, p, allow_degenerate=True)
        reports.append(rep)
        rows.append([rep.s, _num(rep.v_soc)] + [_num(x) for x in rep.v]
                    + [_num(x) for x in rep.alpha] + [_num(rep.xi)]
                    + [_num(x) for x in rep.C] + [_bool(rep.bargaining_success)])
    _write_csv(out / "allocation.csv", header, rows)
    feas = [p for p in points if p.feasible]
    star = star_payoffs(dne, feas)
    _write_csv(out / "star_payoffs.csv", ["s"] + _agent_cols("vstar", r),
               [[p.s] + [_num(star[i][k]) for i in range(r)] for k, p in enumerate(feas)])
    return reports


def write_plot_data(archive: SweepArchive, out: Path, reports=None):
    rows = []
    for rec in sorted(archive.records, key=lambda x: (SOLVERS.index(x.solver), x.s)):
        if rec.status != "failed":
            rows.append(["energy", rec.solver, "", rec.s, _num(rec.J)])
    rows.append(["energy", "dense-lqr", "", "", _num(archive.J_care)])
    try:
        dne, points, raw = assemble_points(archive)
    except MissingSolverData:
        points = None
    if points is not None:
        for p in points:
            if p.feasible:
                rows.append(["energy", "J_soc_raw", "", p.s, _num(raw[p.s])])
                rows.append(["energy", "J_soc", "", p.s, _num(p.J_soc)])
                rows.append(["energy", "J_C_total", "", p.s, _num(p.J_C_total)])
                for i, x in enumerate(p.J_C):
                    rows.append(["selfish", "J_C", i + 1, p.s, _num(x)])
        for rep in reports or []:
            for i in range(len(rep.v)):
                rows.append(["payoff", "v", i + 1, rep.s, _num(rep.v[i])])
                rows.append(["payoff", "alpha", i + 1, rep.s, _num(rep.alpha[i])])
                rows.append(["cost", "C", i + 1, rep.s, _num(rep.C[i])])
    _write_csv(out / "plot_data.csv", ["figure", "series", "agent", "s", "value"], rows)


def emit_report(archive: SweepArchive, out, allocation=True) -> List[str]:
    """Write energies, allocation, payoffs, plot data and a summary.

    Returns the file names written. Raises :class:`MissingSolverData` when
    ``allocation`` is requested but the archive cannot support it; the
    energy files are written first either way.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = ["energies.csv"]
    write_energies(archive, out)
    reports, missing = None, None
    if allocation:
        try:
            reports = write_allocation(archive, out)
            written += ["allocation.csv", "star_payoffs.csv"]
        except MissingSolverData as e:
            missing = e
    write_plot_data(archive, out, reports)
    written.append("plot_data.csv")
    failures = [f"{r.solver}@{r.s}: {r.message}" for r in archive.records if r.status == "failed"]
    summary = {
        "system": {"m": archive.system["m"], "q": archive.system["q"],
                   "nodes": len(archive.system["nodes"]),
                   "agents": archive.system.get("agents")},
        "sweep": archive.sweep,
        "solvers": archive.config.get("solvers"),
        "J_care": archive.J_care,
        "records": len(archive.records),
        "unconverged": sum(r.status == "unconverged" for r in archive.records),
        "failed": failures,
        "allocation": None if missing else "allocation.csv",
        "bargaining_success_all": None if reports is None
        else all(r.bargaining_success for r in reports),
        "wall_time_total": sum(r.wall_time for r in archive.records),
    }
    sio.dump_json(out / "summary.json", summary)
    written.append("summary.json")
    if missing is not None:
        raise missing
    return written
