"""
Command-line entry point.

Exit status is 0 on success, 2 when some solves failed or did not converge
(results are still written) and 1 on fatal errors.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from ._engine import SolverOptions
from .errors import MissingSolverData, SparseLQError
from .objective import Objective
from .runner import (SOLVERS, RunConfig, SweepArchive, build_problem, emit_report, run_sweep,
                     solve_point, write_allocation)
from .system import AgentPartition, card_off
from .wac import SwingParams, synth_power_system

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _out_dir(args, config=None):
    if args.out:
        return Path(args.out)
    if config is not None:
        return Path(config.base_dir) / config.out
    return Path("results")


def cmd_synthesize(args):
    config = RunConfig.load(args.config)
    system, part, w, aw = build_problem(config)
    s = system.max_links if args.s is None else args.s
    opts = SolverOptions.from_dict(config.options)
    gopts = SolverOptions.from_dict(config.game_options, games=True)
    K, converged, message = solve_point(system, part, w, aw, args.solver, s, None, opts, gopts)
    result = {
        "solver": args.solver, "s": s, "J": Objective.social(system, w).value(K),
        "J_agents": [Objective.selfish(system, part, aw, i).value(K) for i in range(part.r)],
        "card_off": card_off(K, system), "converged": bool(converged), "message": message,
        "shape": [system.q, system.m], "K": sio.gain_to_triplets(K),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        sio.dump_json(out / f"solve_{args.solver}_s{s}.json", result)
    print(json.dumps({k: v for k, v in result.items() if k != "K"}))
    return EXIT_OK if converged else EXIT_PARTIAL


def cmd_sweep(args):
    config = RunConfig.load(args.config)
    if args.solver:
        config.solvers = (args.solver,)
    if args.s is not None:
        config.sweep = (args.s,)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        if not args.quiet:
            print(f"{rec.solver:12s} s={rec.s:<5d} J={rec.J:.6g} {rec.status}", file=sys.stderr)

    archive = run_sweep(config, progress)
    archive.save(out / "archive.json")
    partial = any(r.status != "ok" for r in archive.records)
    try:
        emit_report(archive, out)
    except MissingSolverData:
        pass  # allocation needs all of dne, cne and a social solver
    return EXIT_PARTIAL if partial else EXIT_OK


def _archive(args):
    out = _out_dir(args)
    return SweepArchive.load(out / "archive.json"), out


def cmd_allocate(args):
    archive, out = _archive(args)
    reports = write_allocation(archive, out)
    ok = all(not r.degenerate for r in reports)
    for r in reports:
        print(f"s={r.s} v_soc={r.v_soc:.6g} C={np.round(r.C, 4).tolist()} "
              f"success={r.bargaining_success}")
    return EXIT_OK if ok else EXIT_PARTIAL


def cmd_report(args):
    archive, out = _archive(args)
    try:
        emit_report(archive, out)
    except MissingSolverData as e:
        print(f"allocation skipped: {e}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_generate(args):
    agents = tuple(int(x) for x in args.agents.split(",")) if args.agents else (args.n,)
    part = AgentPartition(agents)
    system = synth_power_system(SwingParams.random(args.n, seed=args.seed), part,
                                args.disturbance_node)
    sio.save_system(args.output, system, part, "wac")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sparselq", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("synthesize", help="solve one budget with one solver")
    common(sp)
    sp.add_argument("--solver", choices=SOLVERS, default="centralized")
    sp.add_argument("--s", type=int, help="link budget (default: all off-diagonal entries)")
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("sweep", help="run the configured sweep and write reports")
    common(sp)
    sp.add_argument("--solver", choices=SOLVERS, help="restrict to one solver")
    sp.add_argument("--s", type=int, help="restrict to one budget")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("allocate", help="cost allocation from a sweep archive")
    common(sp, config=False)
    sp.set_defaults(func=cmd_allocate)

    sp = sub.add_parser("report", help="regenerate all report files from a sweep archive")
    common(sp, config=False)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("generate", help="write a synthetic swing-model system file")
    sp.add_argument("output", help="path of the system JSON to write")
    sp.add_argument("--n", type=int, default=4, help="number of generators")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--agents", help="comma-separated node counts per agent")
    sp.add_argument("--disturbance-node", type=int, default=0)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SparseLQError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
