"""Solvers for the discrete survival-probability boundary value problem.

Unknowns are the values at nodes ``1..N``; node 0 carries the Dirichlet
datum and the far-field value closes the problem beyond ``U_max``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, solve_banded, solve_triangular

from .model import JumpDistribution, ModelParams
from .operator import (DiscreteOperator, Grid, GridFunction, apply, assemble, extend_grid,
                       local_stencil, make_grid)

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Numerical failure: singular pivot or non-convergence."""


@dataclass(frozen=True)
class SolverConfig:
    method: str = "direct"
    tol: float = 1e-10
    max_iter: int = 200
    umax_factor: float = 2.0
    umax_tol: float = 1e-6
    max_extensions: int = 10
    scheme: str = "upwind-auto"

    def __post_init__(self):
        if self.method not in ("direct", "picard"):
            raise ValueError(f"method must be 'direct' or 'picard', got {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.umax_factor > 1:
            raise ValueError("umax_factor must be > 1")
        if not self.umax_tol > 0:
            raise ValueError("umax_tol must be > 0")


@dataclass(frozen=True, eq=False)
class Solution:
    grid: Grid
    phi: GridFunction
    residual_norm: float
    iterations: int
    u_max_used: float
    diagnostics: list = field(default_factory=list)

    def __call__(self, u):
        return self.phi(self.grid, u)

    def diagnostics_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "u_max_used": self.u_max_used,
            "n_nodes": int(self.grid.nodes.size),
            "records": self.diagnostics,
        }

    def write_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write("u,phi\n")
            for u, v in zip(self.grid.nodes, self.phi.values):
                fh.write(f"{float(u)!r},{float(v)!r}\n")
            fh.write(f"inf,{float(self.phi.far_field)!r}\n")

    def write_diagnostics(self, path) -> None:
        Path(path).write_text(json.dumps(self.diagnostics_dict(), indent=2))


def _hessenberg_solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``M x = rhs`` for upper-Hessenberg ``M`` in O(n^2).

    No pivoting: the negated monotone-scheme matrix is a diagonally dominant
    M-matrix, for which elimination is stable.
    """
    M = M.copy()
    rhs = rhs.copy()
    n = rhs.size
    scale = np.abs(M).max()
    for k in range(n - 1):
        piv = M[k, k]
        if not abs(piv) > 1e-14 * scale:
            raise SolverError(f"zero pivot at unknown {k + 1} (node index)")
        f = M[k + 1, k] / piv
        if f != 0.0:
            M[k + 1, k:] -= f * M[k, k:]
            rhs[k + 1] -= f * rhs[k]
        M[k + 1, k] = 0.0
    if not abs(M[n - 1, n - 1]) > 1e-14 * scale:
        raise SolverError(f"zero pivot at unknown {n} (node index)")
    return solve_triangular(M, rhs, lower=False, check_finite=False)


def _system(op: DiscreteOperator, bc0: float, bc_far: float, forcing=None):
    n = op.grid.n
    idx = np.arange(1, n + 1)
    M = op.weights[1:, 1:].copy()
    M[idx - 1, idx - 1] += op.diag[1:]
    M[idx[1:] - 1, idx[1:] - 2] += op.sub[2:]
    M[idx[:-1] - 1, idx[:-1]] += op.sup[1:n]
    rhs = -op.tail[1:] * bc_far - op.weights[1:, 0] * bc0
    rhs[0] -= op.sub[1] * bc0
    rhs[-1] -= op.sup[n] * bc_far
    if forcing is not None:
        rhs += np.asarray(forcing, dtype=float)[1:]
    return M, rhs


def solve_direct(op: DiscreteOperator, bc0: float = 0.0, bc_far: float = 1.0,
                 forcing=None) -> Solution:
    """Solve ``L_h phi = forcing`` (default 0) exploiting the Hessenberg structure.

    Jumps only look right, so the nonlocal block is upper triangular and the
    only entries below the diagonal come from the local stencil.
    """
    M, rhs = _system(op, bc0, bc_far, forcing)
    x = _hessenberg_solve(M, rhs)
    phi = GridFunction(np.concatenate([[bc0], x]), far_field=bc_far)
    res_vals = apply(op, phi).values
    if forcing is not None:
        res_vals = res_vals - np.asarray(forcing, dtype=float)
        res_vals[0] = 0.0
    res = float(np.abs(res_vals).max())
    return Solution(op.grid, phi, res, 1, op.grid.u_max, [{"method": "direct", "residual": res}])


def _banded_local(params: ModelParams, grid: Grid, scheme: str):
    sub, diag, sup, _ = local_stencil(params, grid, scheme)
    n = grid.n
    ab = np.zeros((3, n))
    ab[0, 1:] = sup[1:n]
    ab[1, :] = diag[1:]
    ab[2, :-1] = sub[2:]
    return ab, sub, sup


def local_resolvent(params: ModelParams, grid: Grid, f, bc0: float = 0.0,
                    bc_far: float = 1.0, scheme: str = "upwind-auto",
                    _banded=None) -> GridFunction:
    """Solve ``A phi'' + B phi' - lam phi = f`` with Dirichlet data in O(N).

    ``bc_far`` is the value at the ghost node beyond ``U_max``.
    """
    fv = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    if fv.shape != grid.nodes.shape:
        raise ValueError("forcing must have one value per grid node")
    ab, sub, sup = _banded or _banded_local(params, grid, scheme)
    rhs = fv[1:].astype(float).copy()
    rhs[0] -= sub[1] * bc0
    rhs[-1] -= sup[grid.n] * bc_far
    try:
        x = solve_banded((1, 1), ab, rhs, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise SolverError(f"tridiagonal pivot failure: {exc}") from exc
    return GridFunction(np.concatenate([[bc0], x]), far_field=bc_far)


def solve_picard(params: ModelParams, dist: JumpDistribution, grid: Grid,
                 cfg: SolverConfig = SolverConfig(), start=None,
                 bc0: float = 0.0, bc_far: float = 1.0,
                 op: DiscreteOperator | None = None) -> Solution:
    """Fixed-point iteration with the jump integral frozen at the previous iterate.

    Each step solves the local problem with forcing
    ``-(nonlocal part applied to phi_k)``.  The default start ``phi_0 = 0``
    gives a nondecreasing sequence.  Iteration stops when the sup-norm change
    and the extrapolated remaining error are both below ``cfg.tol``.
    """
    op = op or assemble(params, dist, grid, cfg.scheme)
    banded = _banded_local(params, grid, cfg.scheme)
    if start is None:
        cur = np.zeros(grid.nodes.size)
    else:
        cur = np.broadcast_to(np.asarray(start, dtype=float), grid.nodes.shape).copy()
    cur[0] = bc0
    records = []
    delta = np.inf
    for k in range(1, cfg.max_iter + 1):
        forcing = np.zeros_like(cur)
        forcing[1:] = -(op.weights[1:] @ cur + op.tail[1:] * bc_far)
        nxt = local_resolvent(params, grid, forcing, bc0, bc_far, _banded=banded).values
        delta = float(np.abs(nxt - cur).max())
        rec = {"iteration": k, "delta": delta}
        if records and records[-1]["delta"] > 0:
            rec["ratio"] = delta / records[-1]["delta"]
        records.append(rec)
        cur = nxt
        # stop only once the geometric tail bound delta*q/(1-q) is also below tol
        q = max((r.get("ratio", 0.0) for r in records[-3:]), default=0.0)
        if delta < cfg.tol and (delta == 0.0 or (q < 1 and delta * q / (1 - q) < cfg.tol)):
            break
    else:
        raise SolverError(f"Picard iteration did not converge in {cfg.max_iter} "
                          f"iterations; last delta {delta:.3e}")
    phi = GridFunction(cur, far_field=bc_far)
    res = float(np.abs(apply(op, phi).values).max())
    return Solution(grid, phi, res, len(records), grid.u_max, records)


def solve(params, dist, grid, cfg: SolverConfig = SolverConfig()) -> Solution:
    if cfg.method == "picard":
        return solve_picard(params, dist, grid, cfg)
    return solve_direct(assemble(params, dist, grid, cfg.scheme))


@dataclass(frozen=True)
class GridSpec:
    u_max: float = 20.0
    n: int = 800
    stretch: float = 4.0

    def build(self, params: ModelParams) -> Grid:
        center = params.c / params.a if params.a > 0 else None
        return make_grid(self.u_max, self.n, self.stretch, center)


def solve_adaptive(params: ModelParams, dist: JumpDistribution,
                   cfg: SolverConfig = SolverConfig(),
                   base: GridSpec = GridSpec()) -> Solution:
    """Grow ``U_max`` by ``umax_factor`` until the solution stops moving.

    The larger grid extends the smaller one, so both are compared on the
    nodes of the smaller domain.
    """
    grid = base.build(params)
    prev = solve(params, dist, grid, cfg)
    history = [{"u_max": grid.u_max, "n_nodes": int(grid.nodes.size)}]
    for _ in range(cfg.max_extensions):
        bigger = extend_grid(grid, grid.u_max * cfg.umax_factor)
        cur = solve(params, dist, bigger, cfg)
        change = float(np.abs(cur.phi.values[:grid.nodes.size] - prev.phi.values).max())
        history.append({"u_max": bigger.u_max, "n_nodes": int(bigger.nodes.size),
                        "max_change": change})
        logger.info("U_max %.4g -> %.4g: max change %.3e", grid.u_max, bigger.u_max, change)
        if change < cfg.umax_tol:
            diags = [*prev.diagnostics, {"truncation": history}]
            return Solution(prev.grid, prev.phi, prev.residual_norm, prev.iterations,
                            prev.grid.u_max, diags)
        grid, prev = bigger, cur
    raise SolverError(f"truncation did not stabilise after {cfg.max_extensions} extensions "
                      f"(last change {history[-1]['max_change']:.3e})")
