"""Executable checks tying the solver to the structure of the problem.

Every check records the measured quantity, its tolerance and a pass flag.
A report without entries counts as a failure.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .model import JumpDistribution, ModelParams
from .operator import DiscreteOperator, Grid, GridFunction, apply, assemble, make_grid, reference_apply
from .simulator import (SimConfig, dpp_gap, estimate_survival, informed_barrier,
                        lemma1_upper_bound)
from .solver import GridSpec, Solution, SolverConfig, solve_adaptive, solve_direct, solve_picard


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured = float(self.measured)
        self.tolerance = float(self.tolerance)

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def extend(self, checks) -> None:
        self.checks.extend(checks)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "warnings": list(self.warnings),
            "checks": [{**asdict(c), "status": c.status} for c in self.checks],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=to_builtin))

    def table(self) -> str:
        rows = [("check", "status", "measured", "tolerance", "seconds")]
        for c in self.checks:
            rows.append((c.name, c.status, f"{c.measured:.6g}", f"{c.tolerance:.6g}",
                         f"{c.runtime:.2f}"))
        widths = [max(len(r[k]) for r in rows) for k in range(5)]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines += [f"warning: {w}" for w in self.warnings]
        if not self.checks:
            lines.append("no checks were run: report fails")
        return "\n".join(lines)


def to_builtin(obj):
    """``json`` fallback for numpy scalars and arrays."""
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# --- operator consistency -------------------------------------------------------------

class TestFunction(NamedTuple):
    name: str
    f: Callable
    df: Callable
    d2f: Callable
    far_field: float


EXP = TestFunction("exp", lambda u: math.exp(-u), lambda u: -math.exp(-u),
                   lambda u: math.exp(-u), 0.0)
ONE = TestFunction("one", lambda u: 1.0, lambda u: 0.0, lambda u: 0.0, 1.0)
TEST_FUNCTIONS = {"exp": EXP, "one": ONE}


@dataclass(frozen=True)
class ConvergenceResult:
    h: tuple
    errors: tuple
    order: float | None  # None when every error is at rounding level

    @property
    def exact(self) -> bool:
        return self.order is None


def consistency_error(params, dist, test: TestFunction, grid: Grid, probe=(1.0, 5.0),
                      scheme="upwind-auto") -> float:
    op = assemble(params, dist, grid, scheme)
    vals = np.array([test.f(u) for u in grid.nodes])
    res = apply(op, GridFunction(vals, test.far_field)).values
    lo, hi = probe
    idx = np.flatnonzero((grid.nodes >= lo) & (grid.nodes <= hi))
    idx = idx[(idx > 0) & (idx < grid.n)]
    if idx.size == 0:
        raise ValueError(f"no interior grid nodes in probe window {probe}")
    ref = np.array([reference_apply(params, dist, test.f, test.df, test.d2f, grid.nodes[i])
                    for i in idx])
    return float(np.abs(res[idx] - ref).max())


def convergence_study(params: ModelParams, dist: JumpDistribution, test: TestFunction,
                      grids, probe=(1.0, 5.0), scheme="upwind-auto",
                      exact_tol: float = 1e-12) -> ConvergenceResult:
    """Observed order of ``apply`` against ``reference_apply`` under refinement."""
    grids = list(grids)
    hs = [float(g.spacing.max()) for g in grids]
    if len(grids) < 3 or len(set(hs)) < len(hs):
        raise ValueError("convergence study needs at least 3 grids with distinct spacings")
    errs = [consistency_error(params, dist, test, g, probe, scheme) for g in grids]
    if max(errs) <= exact_tol:
        return ConvergenceResult(tuple(hs), tuple(errs), None)
    slope = np.polyfit(np.log(hs), np.log(np.maximum(errs, 1e-300)), 1)[0]
    return ConvergenceResult(tuple(hs), tuple(errs), float(slope))


def uniform_family(u_max: float, n_list) -> list:
    return [make_grid(u_max, n, 1.0) for n in n_list]


# --- comparison and uniqueness ------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonResult:
    passed: bool
    trials: int
    worst_violation: float  # max over trials of max_i (U_i - V_i); <= tol means ordered
    worst_trial: int
    worst_node: int


def discrete_comparison_check(op: DiscreteOperator, n_trials: int, rng: np.random.Generator,
                              tol: float = 1e-10) -> ComparisonResult:
    """Random ordered data: ``L_h U = 0``, ``L_h V = -g`` with ``g >= 0`` must give ``U <= V``."""
    worst = -math.inf
    worst_trial = worst_node = -1
    n = op.grid.nodes.size
    for k in range(n_trials):
        u0, uf = rng.uniform(-1.0, 1.0, 2)
        v0 = u0 + rng.uniform(0.0, 0.5) * rng.integers(0, 2)
        vf = uf + rng.uniform(0.0, 0.5) * rng.integers(0, 2)
        g = rng.uniform(0.0, 1.0, n) * (rng.uniform(size=n) < 0.3)
        U = solve_direct(op, u0, uf).phi.values
        V = solve_direct(op, v0, vf, forcing=-g).phi.values
        diff = U - V
        i = int(np.argmax(diff))
        if diff[i] > worst:
            worst, worst_trial, worst_node = float(diff[i]), k, i
    return ComparisonResult(worst <= tol, n_trials, worst, worst_trial, worst_node)


def uniqueness_check(params: ModelParams, dist: JumpDistribution, grid: Grid,
                     k_starts: int = 3, cfg: SolverConfig = SolverConfig(max_iter=5000),
                     seed: int = 0) -> float:
    """Max pairwise sup distance between Picard limits from different starts.

    Starts are 0, 1, then uniform random values in ``[0, 1]``.
    """
    if k_starts < 1:
        raise ValueError("k_starts must be >= 1")
    rng = np.random.default_rng(seed)
    op = assemble(params, dist, grid, cfg.scheme)
    starts = [np.zeros(grid.nodes.size), np.ones(grid.nodes.size)]
    starts += [rng.uniform(size=grid.nodes.size) for _ in range(max(0, k_starts - 2))]
    sols = [solve_picard(params, dist, grid, cfg, start=s, op=op).phi.values
            for s in starts[:k_starts]]
    return max((float(np.abs(x - y).max()) for x, y in itertools.combinations(sols, 2)),
               default=0.0)


# --- boundary behaviour and cross-validation ---------------------------------------------

def boundary_check(solution: Solution, params: ModelParams, sim: SimConfig,
                   lemma1_samples: int = 10_000, allowance: float = 0.01,
                   n_nodes: int = 1, threads=None) -> list:
    checks = []
    checks.append(Check("boundary_phi0_dirichlet", solution.phi.values[0] == 0.0,
                        float(abs(solution.phi.values[0])), 0.0))
    far = float(solution.phi.values[-1])
    checks.append(Check("boundary_far_field", far >= 0.99, far, 0.99,
                        details={"u_N": solution.grid.u_max}))
    for i in range(1, n_nodes + 1):
        u = float(solution.grid.nodes[i])
        b, dt = _timed(lambda: lemma1_upper_bound(params, u, lemma1_samples, sim, threads))
        tol = 3.0 * (b.stderr + allowance)
        phi_u = float(solution.phi.values[i])
        checks.append(Check(f"boundary_lemma1_node{i}", phi_u <= b.bound + tol,
                            phi_u - b.bound, tol, dt,
                            {"u": u, "phi": phi_u, "bound": b.bound, "stderr": b.stderr,
                             "capped": b.capped}))
    return checks


def cross_validate(params: ModelParams, dist: JumpDistribution, u_list, solution: Solution,
                   sim: SimConfig, allowance: float = 0.01, threads=None) -> list:
    """Solver value must fall inside the widened Monte Carlo bracket at each ``u``."""
    checks = []
    for u in u_list:
        est, dt = _timed(lambda: estimate_survival(params, dist, u, sim, threads))
        phi_u = float(solution(u))
        lo = est.lower - 3 * est.stderr - allowance
        hi = est.upper + 3 * est.stderr + allowance
        # measured: distance outside the bare bracket, tolerance: the widening
        dist_out = max(est.lower - phi_u, phi_u - est.upper, 0.0)
        checks.append(Check(f"cross_validate_u={u:g}", lo <= phi_u <= hi, dist_out,
                            3 * est.stderr + allowance, dt,
                            {"u": u, "phi": phi_u, **est.to_dict(), "barrier": sim.barrier}))
    return checks


def dpp_check(solution, params, dist, u, t, n_paths, sim: SimConfig,
              allowance: float = 0.01, threads=None) -> Check:
    r, dt = _timed(lambda: dpp_gap(solution, params, dist, u, t, n_paths, sim, threads))
    tol = 3 * r.stderr + allowance
    return Check(f"dpp_u={u:g}_t={t:g}", r.gap <= tol, r.gap, tol, dt,
                 {"phi_u": r.phi_u, "mean": r.mean, "stderr": r.stderr, "n_paths": r.n_paths})


def structural_checks(solution: Solution, op: DiscreteOperator, lam: float) -> list:
    v = solution.phi.values
    drop = float(max(0.0, -np.diff(v).min()))
    out_of_range = float(max(0.0, -v.min(), v.max() - 1.0))
    mass_err = float(np.abs(op.weights[1:].sum(axis=1) + op.tail[1:] - lam).max())
    bad_rows = int(np.count_nonzero(~op.sign_conditions_hold()))
    lower = np.tril(op.weights, -1)
    return [
        Check("monotone_in_u", drop <= 1e-9, drop, 1e-9),
        Check("values_in_unit_interval", out_of_range <= 1e-9, out_of_range, 1e-9),
        Check("row_mass_plus_tail", mass_err <= 1e-10, mass_err, 1e-10),
        Check("monotone_scheme_sign_conditions", bad_rows == 0, float(bad_rows), 0.0),
        Check("nonlocal_one_sided", not np.any(lower), float(np.count_nonzero(lower)), 0.0),
        Check("residual", solution.residual_norm <= 1e-10, solution.residual_norm, 1e-10),
    ]


def parameter_trend_checks(params, dist, grid: Grid, u_probe=(0.5, 1.0, 2.0)) -> list:
    """Solver trends: survival falls with c, rises with lam and with jump scale."""
    from .model import make_exponential

    def phi(p, d):
        return np.array(solve_direct(assemble(p, d, grid)).phi(grid, np.array(u_probe)))

    def worst_drop(seq):
        return float(max(0.0, *(np.max(a - b) for a, b in zip(seq, seq[1:]))))

    base = (params.a, params.sigma)
    by_c = [phi(ModelParams(*base, c, params.lam), dist) for c in
            (params.c * 0.5, params.c, params.c * 1.5)]
    by_c = by_c[::-1]  # expect nondecreasing when c decreases
    by_lam = [phi(ModelParams(*base, params.c, lam), dist) for lam in
              (params.lam * 0.5, params.lam, params.lam * 2)]
    checks = [Check("trend_c_decreasing", worst_drop(by_c) <= 1e-9, worst_drop(by_c), 1e-9),
              Check("trend_lambda_increasing", worst_drop(by_lam) <= 1e-9,
                    worst_drop(by_lam), 1e-9)]
    if hasattr(dist, "rate"):
        by_s = [phi(params, make_exponential(dist.rate / s)) for s in (1.0, 1.5, 2.0)]
        checks.append(Check("trend_jump_scale_increasing", worst_drop(by_s) <= 1e-9,
                            worst_drop(by_s), 1e-9))
    return checks


def richardson_check(params, dist, cfg: SolverConfig, base: GridSpec, u_list,
                     allowance: float) -> Check:
    """The discretization allowance must exceed the two-level error estimate."""
    (coarse, fine), dt = _timed(lambda: (
        solve_adaptive(params, dist, cfg, base),
        solve_adaptive(params, dist, cfg, replace(base, n=2 * base.n))))
    us = np.asarray(u_list, dtype=float)
    est = float(np.abs(coarse(us) - fine(us)).max())
    return Check("discretization_allowance", est <= allowance, est, allowance, dt,
                 {"coarse_n": base.n, "fine_n": 2 * base.n})


def full_report(rc, threads=None) -> ValidationReport:
    """Run every check for a parsed ``RunConfig``."""
    params, dist, vs = rc.params, rc.dist, rc.validation
    report = ValidationReport()
    if dist.warning:
        report.warnings.append(dist.warning)
    if params.zero_payout:
        report.warnings.append("c = 0: zero-payout diagnostic mode")
    sol, dt = _timed(lambda: solve_adaptive(params, dist, rc.solver, rc.grid))
    op = assemble(params, dist, sol.grid, rc.solver.scheme)
    report.extend(structural_checks(sol, op, params.lam))
    report.add(richardson_check(params, dist, rc.solver, rc.grid, vs.u_list, vs.allowance))
    report.extend(parameter_trend_checks(params, dist, rc.grid.build(params)))

    conv_grids = uniform_family(rc.convergence.u_max, rc.convergence.n_list)
    try:
        conv, cdt = _timed(lambda: convergence_study(
            params, dist, TEST_FUNCTIONS[rc.convergence.test_function], conv_grids,
            rc.convergence.probe, rc.convergence.scheme))
        order = math.inf if conv.exact else conv.order
        report.add(Check("operator_convergence_order", order >= 1.8, order, 1.8, cdt,
                         {"h": conv.h, "errors": conv.errors}))
    except ValueError as exc:
        report.add(Check("operator_convergence_order", False, math.nan, 1.8,
                         details={"error": str(exc)}))

    small_grid = rc.grid.build(params)
    small_op = assemble(params, dist, small_grid, "upwind-auto")
    cmp_res, cdt = _timed(lambda: discrete_comparison_check(
        small_op, vs.comparison_trials, np.random.default_rng(rc.sim.seed)))
    report.add(Check("discrete_comparison", cmp_res.passed, cmp_res.worst_violation, 1e-10,
                     cdt, {"trials": cmp_res.trials, "worst_trial": cmp_res.worst_trial,
                           "worst_node": cmp_res.worst_node}))
    pic_cfg = replace(rc.solver, method="picard", max_iter=vs.picard_max_iter)
    uq, udt = _timed(lambda: uniqueness_check(params, dist, small_grid, vs.uniqueness_starts,
                                              pic_cfg, rc.sim.seed))
    report.add(Check("picard_uniqueness", uq <= 10 * pic_cfg.tol, uq, 10 * pic_cfg.tol, udt))
    direct = solve_direct(small_op).phi.values
    picard = solve_picard(params, dist, small_grid, pic_cfg, op=small_op).phi.values
    gap = float(np.abs(direct - picard).max())
    report.add(Check("direct_vs_picard", gap <= 10 * pic_cfg.tol, gap, 10 * pic_cfg.tol))

    sim = rc.sim
    if rc.barrier_auto:
        sim = replace(sim, barrier=informed_barrier(sol, rc.barrier_level))
    report.extend(boundary_check(sol, params, sim, vs.lemma1_samples, vs.allowance,
                                 threads=threads))
    report.extend(cross_validate(params, dist, vs.u_list, sol, sim, vs.allowance, threads))
    report.add(dpp_check(sol, params, dist, vs.dpp_u, vs.dpp_t, vs.dpp_paths, sim,
                         vs.allowance, threads))
    return report
