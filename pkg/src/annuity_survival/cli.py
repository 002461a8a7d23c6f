"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import simulator
from .config import ConfigError, RunConfig, load_config
from .operator import QuadratureError
from .simulator import informed_barrier, simulate_paths, summarize
from .solver import SolverError, solve_adaptive
from .validation import TEST_FUNCTIONS, to_builtin, convergence_study, full_report, uniform_family

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("annuity_survival")


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=2, default=to_builtin)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _load(args) -> RunConfig:
    rc = load_config(args.config)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    return rc


def _out(args, rc: RunConfig, key: str):
    return args.out or rc.output.get(key)


def cmd_solve(args) -> int:
    rc = _load(args)
    sol = solve_adaptive(rc.params, rc.dist, rc.solver, rc.grid)
    out = _out(args, rc, "csv") or "phi.csv"
    sol.write_csv(out)
    diag = sol.diagnostics_dict()
    diag["zero_payout_mode"] = rc.params.zero_payout
    if rc.dist.warning:
        diag["warning"] = rc.dist.warning
    _dump(diag, Path(out).with_suffix(".diagnostics.json"))
    log.info("wrote %s (%d nodes, U_max=%g)", out, sol.grid.nodes.size, sol.u_max_used)
    return EXIT_OK


def cmd_simulate(args) -> int:
    rc = _load(args)
    if args.u is None or not args.u > 0:
        raise ConfigError("--u must be given and positive")
    sim = rc.sim
    if rc.barrier_auto:
        sol = solve_adaptive(rc.params, rc.dist, rc.solver, rc.grid)
        sim = replace(sim, barrier=informed_barrier(sol, rc.barrier_level))
    batch = simulate_paths(rc.params, rc.dist, args.u, sim, args.threads)
    est = summarize(batch)
    paths_csv = args.paths_csv or rc.output.get("paths_csv")
    if paths_csv:
        batch.write_csv(paths_csv)
    _dump({**est.to_dict(), "u": args.u, "barrier": sim.barrier, "seed": sim.seed},
          _out(args, rc, "json"))
    return EXIT_OK


def cmd_validate(args) -> int:
    rc = _load(args)
    report = full_report(rc, args.threads)
    _dump(report.to_dict(), _out(args, rc, "json") or "report.json")
    print(report.table())
    if not report.passed:
        print("failed checks: " + ", ".join(report.failures() or ["<no checks>"]),
              file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def tail_slope(sol, frac: float = 0.25) -> float:
    """Log-log slope of ``1 - Phi`` over the upper part of the grid."""
    u = sol.grid.nodes
    v = 1.0 - sol.phi.values
    keep = (u >= frac * u[-1]) & (v > 0)
    if np.count_nonzero(keep) < 2:
        return math.nan
    return float(np.polyfit(np.log(u[keep]), np.log(v[keep]), 1)[0])


def cmd_convergence(args) -> int:
    rc = _load(args)
    cs = rc.convergence
    if len(cs.n_list) < 3:
        raise ConfigError("convergence study needs at least 3 grids in convergence.n_list")
    try:
        res = convergence_study(rc.params, rc.dist, TEST_FUNCTIONS[cs.test_function],
                                uniform_family(cs.u_max, cs.n_list), cs.probe, cs.scheme)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sol = solve_adaptive(rc.params, rc.dist, rc.solver, rc.grid)
    out = _out(args, rc, "csv") or "convergence.csv"
    with Path(out).open("w") as fh:
        fh.write("h,error\n")
        for h, e in zip(res.h, res.errors):
            fh.write(f"{h!r},{e!r}\n")
        fh.write(f"order,{'exact' if res.exact else repr(res.order)}\n")
        fh.write(f"tail_slope_exploratory,{tail_slope(sol)!r}\n")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "validate": cmd_validate,
            "convergence": cmd_convergence}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annuity-survival",
        description="Survival probability of the annuity surplus model with investment.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output path (CSV for solve/convergence, JSON otherwise)")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--threads", type=int,
                       help=f"worker threads (default ${simulator.THREADS_ENV} or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--u", type=float, help="initial capital")
            p.add_argument("--paths-csv", help="optional per-path audit CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, QuadratureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
