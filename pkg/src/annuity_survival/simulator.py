"""Monte Carlo simulation of the surplus process and ruin detection.

Between jumps the diffusion is advanced by Lie splitting: an exact
geometric Brownian step followed by subtraction of the payout ``c * h``.
Jump times are exact exponential inter-arrival times.  Each path draws from
its own PCG64 stream keyed by ``(seed, path index)``, so results do not
depend on how paths are distributed over worker threads.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .model import JumpDistribution, ModelParams

RUINED = 0
REACHED_BARRIER = 1
ALIVE = 2
OUTCOME_NAMES = {RUINED: "ruined", REACHED_BARRIER: "barrier", ALIVE: "alive"}

THREADS_ENV = "ANNUITY_SURVIVAL_THREADS"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 10_000
    t_max: float = 200.0
    barrier: float = math.inf
    seed: int = 12345
    bridge_correction: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be > 0, got {self.t_max}")
        if not self.barrier > 0:
            raise ValueError(f"barrier must be > 0, got {self.barrier}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class PathOutcome:
    kind: str  # "ruined" | "barrier" | "alive"
    time: float
    value: float

    def __post_init__(self):
        if self.kind == "alive" and not self.value > 0:
            raise ValueError("alive paths must have positive terminal value")


@dataclass(frozen=True)
class SurvivalEstimate:
    lower: float
    upper: float
    stderr: float
    n_paths: int
    indeterminate: int

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "stderr": self.stderr,
                "n_paths": self.n_paths, "indeterminate": self.indeterminate}


@dataclass(frozen=True)
class PathBatch:
    """Raw per-path results: outcome codes, stopping times, terminal values."""

    codes: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def outcome(self, i: int) -> PathOutcome:
        return PathOutcome(OUTCOME_NAMES[int(self.codes[i])], float(self.times[i]),
                           float(self.values[i]))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "outcome", "time_or_value"])
            for i, code in enumerate(self.codes):
                v = self.values[i] if code == ALIVE else self.times[i]
                w.writerow([i, OUTCOME_NAMES[int(code)], repr(float(v))])


@njit(cache=True)
def _draw_jump(rng, kind, p1, p2, values, cumprobs):
    if kind == 0:
        return rng.exponential(p1)
    if kind == 1:
        return rng.gamma(p1, p2)
    k = np.searchsorted(cumprobs, rng.random(), side="right")
    if k >= values.size:
        k = values.size - 1
    return values[k]


@njit(cache=True, nogil=True)
def _run_path(rng, x0, a, sigma, c, lam, kind, p1, p2, values, cumprobs,
              dt, t_max, barrier, bridge):
    x = x0
    t = 0.0
    if x <= 0.0:
        return RUINED, 0.0, x
    if x >= barrier:
        return REACHED_BARRIER, 0.0, x
    mu = a - 0.5 * sigma * sigma
    next_jump = rng.exponential(1.0 / lam) if lam > 0 else np.inf
    h_floor = dt / 1024.0
    while t < t_max:
        h = dt
        if c > 0.0 and x < 10.0 * c * dt:
            h = max(x / (10.0 * c), h_floor)
        jump_now = False
        rem_j = next_jump - t
        rem_t = t_max - t
        if rem_j <= h and rem_j <= rem_t:
            h = rem_j
            jump_now = True
        elif rem_t <= h:
            h = rem_t
        x_old = x
        x = x * math.exp(mu * h + sigma * math.sqrt(h) * rng.standard_normal()) - c * h
        t = next_jump if jump_now else t + h
        if x <= 0.0:
            return RUINED, t, x
        if bridge and c > 0.0 and h > 0.0:
            # Brownian-bridge crossing probability with the local volatility frozen
            v = sigma * x_old
            if rng.random() < math.exp(-2.0 * x_old * x / (v * v * h)):
                return RUINED, t, 0.0
        if jump_now:
            x += _draw_jump(rng, kind, p1, p2, values, cumprobs)
            next_jump += rng.exponential(1.0 / lam)
        if x >= barrier:
            return REACHED_BARRIER, t, x
    return ALIVE, t, x


def path_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def simulate_paths(params: ModelParams, dist: JumpDistribution | None, u: float,
                   cfg: SimConfig, threads: int | None = None,
                   t_max: float | None = None, barrier: float | None = None) -> PathBatch:
    """Simulate ``cfg.n_paths`` independent paths from ``u``."""
    if dist is None or params.lam == 0:
        spec = (0, 1.0, 0.0, np.zeros(1), np.ones(1))
        lam = 0.0
    else:
        spec = dist.kernel_spec()
        lam = params.lam
    t_max = cfg.t_max if t_max is None else t_max
    barrier = cfg.barrier if barrier is None else barrier
    n = int(cfg.n_paths)
    codes = np.empty(n, dtype=np.int8)
    times = np.empty(n)
    values = np.empty(n)
    args = (float(u), params.a, params.sigma, params.c, lam, *spec,
            cfg.dt, float(t_max), float(barrier), bool(cfg.bridge_correction))

    def work(lo, hi):
        for i in range(lo, hi):
            codes[i], times[i], values[i] = _run_path(path_generator(cfg.seed, i), *args)

    threads = threads or default_threads()
    if threads == 1 or n < 2 * threads:
        work(0, n)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    return PathBatch(codes, times, values)


def simulate_path(params: ModelParams, dist: JumpDistribution, u: float, cfg: SimConfig,
                  rng: np.random.Generator) -> PathOutcome:
    if not u > 0:
        raise ValueError("initial capital must be > 0")
    spec = dist.kernel_spec()
    code, t, x = _run_path(rng, float(u), params.a, params.sigma, params.c, params.lam, *spec,
                           cfg.dt, cfg.t_max, cfg.barrier, cfg.bridge_correction)
    return PathOutcome(OUTCOME_NAMES[int(code)], float(t), float(x))


def summarize(batch: PathBatch) -> SurvivalEstimate:
    n = batch.codes.size
    reached = int(np.count_nonzero(batch.codes == REACHED_BARRIER))
    alive = int(np.count_nonzero(batch.codes == ALIVE))
    lower = reached / n
    upper = (reached + alive) / n
    mid = 0.5 * (lower + upper)
    return SurvivalEstimate(lower, upper, math.sqrt(mid * (1.0 - mid) / n), n, alive)


def estimate_survival(params: ModelParams, dist: JumpDistribution, u: float,
                      cfg: SimConfig, threads: int | None = None) -> SurvivalEstimate:
    """Interval estimate of the survival probability.

    Paths absorbed at the barrier count as survivors; paths still alive at
    the horizon are indeterminate and only enter the upper bound.
    """
    if not u > 0:
        raise ValueError("initial capital must be > 0")
    return summarize(simulate_paths(params, dist, u, cfg, threads))


def informed_barrier(solution, level: float = 1e-3) -> float:
    """Smallest node where the solved survival probability reaches ``1 - level``."""
    vals = solution.phi.values
    idx = np.flatnonzero(vals >= 1.0 - level)
    if idx.size == 0:
        return float(solution.grid.u_max)
    return float(solution.grid.nodes[idx[0]])


@dataclass(frozen=True)
class DPPResult:
    gap: float
    stderr: float
    phi_u: float
    mean: float
    n_paths: int


def dpp_gap(solution, params: ModelParams, dist: JumpDistribution, u: float, t: float,
            n_paths: int, cfg: SimConfig, threads: int | None = None) -> DPPResult:
    """Compare ``Phi(u)`` with the sample mean of ``Phi(X_{t ^ tau})``."""
    phi_u = float(solution(u))
    if t == 0:
        return DPPResult(0.0, 0.0, phi_u, phi_u, int(n_paths))
    sim = SimConfig(cfg.dt, int(n_paths), float(t), math.inf, cfg.seed, cfg.bridge_correction)
    batch = simulate_paths(params, dist, u, sim, threads)
    vals = np.where(batch.codes == RUINED, 0.0, solution(np.maximum(batch.values, 0.0)))
    mean = math.fsum(vals) / vals.size
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return DPPResult(abs(phi_u - mean), se, phi_u, mean, int(n_paths))


@dataclass(frozen=True)
class HittingTimes:
    times: np.ndarray
    capped: int


def hitting_times_jumpfree(params: ModelParams, u: float, cfg: SimConfig,
                           threads: int | None = None) -> HittingTimes:
    """First times the jump-free process ``dY = (aY - c)dt + sigma Y dW`` hits 0.

    Paths that survive to ``cfg.t_max`` are reported at the cap and counted.
    """
    if u <= 0:
        return HittingTimes(np.zeros(int(cfg.n_paths)), 0)
    batch = simulate_paths(params, None, u, cfg, threads, barrier=math.inf)
    capped = int(np.count_nonzero(batch.codes != RUINED))
    return HittingTimes(np.where(batch.codes == RUINED, batch.times, cfg.t_max), capped)


def hitting_time_jumpfree(params: ModelParams, u: float, cfg: SimConfig,
                          rng: np.random.Generator) -> tuple[float, bool]:
    """Single hitting time and whether it was capped at ``cfg.t_max``."""
    if u <= 0:
        return 0.0, False
    code, t, _ = _run_path(rng, float(u), params.a, params.sigma, params.c, 0.0,
                           0, 1.0, 0.0, np.zeros(1), np.ones(1),
                           cfg.dt, cfg.t_max, math.inf, cfg.bridge_correction)
    return (float(t), False) if code == RUINED else (float(cfg.t_max), True)


@dataclass(frozen=True)
class Lemma1Bound:
    bound: float
    stderr: float
    capped: int
    n_paths: int


def lemma1_upper_bound(params: ModelParams, u: float, n_paths: int, cfg: SimConfig,
                       threads: int | None = None) -> Lemma1Bound:
    """Monte Carlo value of ``E[1 - exp(-lam T_u)]`` for the jump-free hitting time.

    Survival needs a jump before the jump-free process hits zero, so this
    bounds the survival probability from above.  Capped samples enter at the
    cap, which biases the bound upward.
    """
    if params.lam == 0 or u <= 0:
        return Lemma1Bound(0.0, 0.0, 0, int(n_paths))
    sim = SimConfig(cfg.dt, int(n_paths), cfg.t_max, math.inf, cfg.seed, cfg.bridge_correction)
    ht = hitting_times_jumpfree(params, u, sim, threads)
    vals = -np.expm1(-params.lam * ht.times)
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return Lemma1Bound(math.fsum(vals) / vals.size, se, ht.capped, int(n_paths))
