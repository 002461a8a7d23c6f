"""Discrete integro-differential operator on a truncated nonuniform grid.

The continuous operator is

    L phi(u) = A(u) phi''(u) + B(u) phi'(u) + lam * int [phi(u+y) - phi(u)] dF(y)

with ``A(u) = sigma^2 u^2 / 2`` and ``B(u) = a u - c``.  Node 0 (``u = 0``)
carries a Dirichlet value; nodes ``1..N`` carry equations.  The last node
uses a ghost neighbour at ``u_N + (u_N - u_{N-1})`` holding the far-field
value, and every value beyond ``U_max`` is the far-field value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.integrate import cumulative_trapezoid

from .model import JumpDistribution, ModelParams

SCHEMES = ("central", "upwind-auto")


class GridError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 9:
            raise GridError("grid needs at least 9 nodes (N >= 8)")
        if nodes[0] != 0.0:
            raise GridError("first grid node must be exactly 0")
        if not np.all(np.diff(nodes) > 0):
            raise GridError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n(self) -> int:
        """Index of the last node (``N``)."""
        return self.nodes.size - 1

    @property
    def u_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True, eq=False)
class GridFunction:
    values: np.ndarray
    far_field: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(values)) or not math.isfinite(self.far_field):
            raise ValueError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __call__(self, grid: Grid, u):
        """Piecewise-linear evaluation; far field beyond the last node, 0 below 0."""
        u = np.asarray(u, dtype=float)
        out = np.interp(u, grid.nodes, self.values)
        out = np.where(u > grid.u_max, self.far_field, out)
        out = np.where(u < 0, 0.0, out)
        return out if out.ndim else float(out)


def make_grid(U_max: float, N: int, stretch: float = 1.0, center: float | None = None) -> Grid:
    """Graded mesh on ``[0, U_max]``.

    Spacing grows linearly with the distance to the nearest cluster point
    (``0`` and, when given and interior, ``center``, typically ``c / a``).
    ``stretch`` is the growth factor over a tenth of the domain; 1 gives a
    uniform mesh.
    """
    if not (U_max > 0 and math.isfinite(U_max)):
        raise GridError(f"U_max must be positive, got {U_max}")
    if int(N) != N or N < 8:
        raise GridError(f"N must be an integer >= 8, got {N}")
    if stretch < 1:
        raise GridError(f"stretch must be >= 1, got {stretch}")
    N = int(N)
    if stretch == 1:
        nodes = np.linspace(0.0, U_max, N + 1)
    else:
        fine = np.linspace(0.0, U_max, 64 * N + 1)
        dist = fine.copy()
        if center is not None and 0 < center < 0.9 * U_max:
            dist = np.minimum(dist, np.abs(fine - center))
        spacing = 1.0 + (stretch - 1.0) * dist / (0.1 * U_max)
        xi = cumulative_trapezoid(1.0 / spacing, fine, initial=0.0)
        xi /= xi[-1]
        nodes = np.interp(np.linspace(0.0, 1.0, N + 1), xi, fine)
    nodes[0] = 0.0
    nodes[-1] = U_max
    return Grid(nodes)


def extend_grid(grid: Grid, new_umax: float) -> Grid:
    """Append nodes up to ``new_umax`` keeping the last relative spacing ``h/u``."""
    if new_umax <= grid.u_max:
        raise GridError("extension must increase U_max")
    ratio = 1.0 + grid.spacing[-1] / grid.u_max
    n_new = max(1, math.ceil(math.log(new_umax / grid.u_max) / math.log(ratio)))
    tail = grid.u_max * np.exp(np.linspace(0.0, math.log(new_umax / grid.u_max), n_new + 1)[1:])
    tail[-1] = new_umax
    return Grid(np.concatenate([grid.nodes, tail]))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Assembled operator.  Arrays are indexed by node; row 0 is unused.

    ``sub/diag/sup`` hold the local three-point stencil including ``-lam`` on
    the diagonal.  ``weights[i, j]`` is the nonlocal quadrature weight of node
    ``j`` in row ``i`` (zero for ``j < i``) and ``tail[i]`` multiplies the
    far-field value.
    """

    grid: Grid
    lam: float
    scheme: str
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    weights: np.ndarray
    tail: np.ndarray
    upwind: np.ndarray

    def offdiag_sum(self) -> np.ndarray:
        return self.sub + self.sup + self.weights.sum(axis=1)

    def sign_conditions_hold(self) -> np.ndarray:
        """Per-row monotone-scheme check (row 0 reported as True)."""
        ok = (self.sub >= 0) & (self.sup >= 0) & np.all(self.weights >= 0, axis=1)
        bound = -self.offdiag_sum() - self.tail
        ok &= self.diag <= bound + 1e-12 * np.maximum(1.0, np.abs(self.diag))
        ok[0] = True
        return ok


def local_stencil(params: ModelParams, grid: Grid, scheme: str = "upwind-auto"):
    """Three-point coefficients of ``A phi'' + B phi' - lam phi``.

    Returns ``(sub, diag, sup, upwind)``.  Under ``upwind-auto`` a node
    switches to a one-sided first derivative (side chosen by the sign of
    ``B``) whenever the central stencil would give a negative neighbour
    coefficient; on a uniform mesh this is the cell Peclet test
    ``|B| h / (2A) > 1``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    u = grid.nodes
    n = grid.n
    h = grid.spacing
    hm = np.zeros(n + 1)
    hp = np.zeros(n + 1)
    hm[1:] = h
    hp[1:n] = h[1:]
    hp[n] = h[-1]  # ghost node
    A = params.diffusion(u)
    B = params.drift(u)
    sub = np.zeros(n + 1)
    sup = np.zeros(n + 1)
    upwind = np.zeros(n + 1, dtype=bool)
    i = slice(1, n + 1)
    hs = hm[i] + hp[i]
    d2_sub = 2.0 / (hm[i] * hs)
    d2_sup = 2.0 / (hp[i] * hs)
    # central first derivative: (hm^2 f+ + (hp^2 - hm^2) f0 - hp^2 f-) / (hm hp hs)
    c_sub = A[i] * d2_sub - B[i] * hp[i] / (hm[i] * hs)
    c_sup = A[i] * d2_sup + B[i] * hm[i] / (hp[i] * hs)
    if scheme == "upwind-auto":
        switch = (c_sub < 0) | (c_sup < 0)
    else:
        switch = np.zeros(n, dtype=bool)
    fwd = np.maximum(B[i], 0.0)
    bwd = np.maximum(-B[i], 0.0)
    sub[i] = np.where(switch, A[i] * d2_sub + bwd / hm[i], c_sub)
    sup[i] = np.where(switch, A[i] * d2_sup + fwd / hp[i], c_sup)
    upwind[i] = switch
    diag = np.zeros(n + 1)
    # derivatives of constants vanish, so the stencil row sums to -lam
    diag[i] = -(sub[i] + sup[i]) - params.lam
    return sub, diag, sup, upwind


def nonlocal_weights(dist: JumpDistribution, grid: Grid, lam: float):
    """Stieltjes quadrature of ``lam * int phi(u_i + y) dF(y)``.

    ``phi`` is interpolated linearly between nodes; on the cell
    ``y in (u_j - u_i, u_{j+1} - u_i]`` the weights are exact cdf increments
    split by the partial first moment.  Returns ``(weights, tail)``.
    """
    u = grid.nodes
    n = grid.n
    weights = np.zeros((n + 1, n + 1))
    tail = np.zeros(n + 1)
    for i in range(1, n + 1):
        lo = u[i:-1] - u[i]
        hi = u[i + 1:] - u[i]
        if lo.size:
            h = hi - lo
            mass = np.diff(dist.cdf(np.concatenate([lo, hi[-1:]])))
            mass = np.maximum(mass, 0.0)
            # int (y - lo) dF over the cell, i.e. the share attributed to the right node
            right = (dist.partial_mean(lo, hi) - lo * mass) / h
            right = np.clip(right, 0.0, mass)
            left = mass - right
            weights[i, i:n] += left
            weights[i, i + 1:n + 1] += right
            tail[i] = 1.0 - dist.cdf(u[n] - u[i])
        else:
            tail[i] = 1.0
    # renormalise against rounding so each row's mass plus tail is exactly 1
    total = weights.sum(axis=1) + tail
    total[0] = 1.0
    weights /= total[:, None]
    tail /= total
    return lam * weights, lam * tail


def assemble(params: ModelParams, dist: JumpDistribution, grid: Grid,
             scheme: str = "upwind-auto") -> DiscreteOperator:
    sub, diag, sup, upwind = local_stencil(params, grid, scheme)
    weights, tail = nonlocal_weights(dist, grid, params.lam)
    for arr in (sub, diag, sup, weights, tail, upwind):
        arr.setflags(write=False)
    return DiscreteOperator(grid, params.lam, scheme, sub, diag, sup, weights, tail, upwind)


def apply(op: DiscreteOperator, phi: GridFunction) -> GridFunction:
    """Residual ``(L_h phi)_i`` at nodes ``1..N``; node 0 carries 0."""
    v = phi.values
    if v.shape != op.grid.nodes.shape:
        raise GridError(
            f"grid function has {v.size} values, operator grid has {op.grid.nodes.size} nodes"
        )
    ext = np.append(v, phi.far_field)
    res = np.zeros_like(v)
    res[1:] = (op.sub[1:] * ext[:-2] + op.diag[1:] * ext[1:-1] + op.sup[1:] * ext[2:]
               + op.weights[1:] @ v + op.tail[1:] * phi.far_field)
    return GridFunction(res, far_field=0.0)


def reference_apply(params: ModelParams, dist: JumpDistribution,
                    phi: Callable[[float], float], dphi: Callable[[float], float],
                    d2phi: Callable[[float], float], u: float,
                    points=(), epsabs: float = 1e-10) -> float:
    """Evaluate ``L phi(u)`` with adaptive quadrature.

    The jump integral is computed after integrating by parts,
    ``int [phi(u+y) - phi(u)] dF(y) = int phi'(u+y) (1 - F(y)) dy``, which
    needs no density and handles atoms.  ``points`` lists kinks of ``phi'``
    as jump offsets ``y``.
    """
    if not u > 0:
        raise ValueError("reference_apply needs u > 0")
    local = float(params.diffusion(u)) * d2phi(u) + float(params.drift(u)) * dphi(u)
    if params.lam == 0:
        return local

    def integrand(y):
        return dphi(u + y) * (1.0 - float(dist.cdf(y)))

    cut = max(dist.upper_quantile(1 - 1e-15), 1.0)
    brk = sorted({float(p) for p in list(points) + list(dist.breakpoints()) if 0 < p < cut})
    edges = [0.0, *brk, cut]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err, info = _quad(integrand, lo, hi, epsabs)
        total += val
    val, err, info = _quad(integrand, cut, np.inf, epsabs)
    total += val
    return local + params.lam * total


def _quad(f, lo, hi, epsabs):
    val, err, info, *msg = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=1e-12,
                                          limit=500, full_output=1)
    if msg and err > 10 * epsabs:
        raise QuadratureError(f"quadrature on [{lo}, {hi}] did not converge: {msg[0]}")
    return val, err, info


def dump_operator_csv(op: DiscreteOperator, path) -> None:
    """Write ``row,col,value,tail`` triplets (local and nonlocal entries)."""
    n = op.grid.n
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value", "tail"])
        for i in range(1, n + 1):
            entries = {i - 1: op.sub[i], i: op.diag[i]}
            if i < n:
                entries[i + 1] = op.sup[i]
            for j in np.flatnonzero(op.weights[i]):
                entries[int(j)] = entries.get(int(j), 0.0) + op.weights[i, j]
            for j in sorted(entries):
                w.writerow([i, j, repr(float(entries[j])), repr(float(op.tail[i]))])
            if i == n:
                w.writerow([i, n + 1, repr(float(op.sup[n])), repr(float(op.tail[i]))])
