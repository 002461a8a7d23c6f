"""Model coefficients and jump laws for the annuity surplus process.

The surplus evolves as ``dX = (a X - c) dt + sigma X dW + dP`` where ``P`` is
a compound Poisson process with intensity ``lam`` and positive jump sizes.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

# Kernel codes consumed by the compiled path simulator.
KIND_EXPONENTIAL = 0
KIND_GAMMA = 1
KIND_EMPIRICAL = 2


class ModelError(ValueError):
    """Invalid model coefficients or jump-law parameters."""


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the surplus SDE.

    ``strict=False`` skips the net-profit check and admits ``lam = 0``; it is
    meant for the jump-free auxiliary process and diagnostic oracles only.
    """

    a: float
    sigma: float
    c: float
    lam: float
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        for name in ("a", "sigma", "c", "lam"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ModelError(f"{name} must be finite, got {v!r}")
        if self.sigma <= 0:
            raise ModelError(f"volatility sigma must be > 0, got {self.sigma}")
        if self.c < 0:
            raise ModelError(f"payout rate c must be >= 0, got {self.c}")
        if self.strict:
            if self.lam <= 0:
                raise ModelError(f"jump intensity lambda must be > 0, got {self.lam}")
            if self.gamma <= 1:
                raise ModelError(
                    "net-profit condition violated: need gamma = 2a/sigma^2 > 1 "
                    f"(a > sigma^2/2), got gamma = {self.gamma:.6g}"
                )
        elif self.lam < 0:
            raise ModelError(f"jump intensity lambda must be >= 0, got {self.lam}")
        if self.c == 0:
            logger.warning("c = 0: zero-payout diagnostic mode, ruin is impossible")

    @property
    def gamma(self) -> float:
        return 2.0 * self.a / self.sigma**2

    @property
    def zero_payout(self) -> bool:
        return self.c == 0

    def diffusion(self, u):
        """Second-order coefficient ``sigma^2 u^2 / 2``."""
        return 0.5 * self.sigma**2 * np.asarray(u, dtype=float) ** 2

    def drift(self, u):
        """First-order coefficient ``a u - c``; changes sign at ``c / a``."""
        return self.a * np.asarray(u, dtype=float) - self.c


def gamma(params: ModelParams) -> float:
    return params.gamma


class JumpDistribution(ABC):
    """Law of the (positive) income jumps.

    Subclasses provide the cdf, a sampler, the mean and ``partial_mean``, the
    first moment restricted to ``(lo, hi]``, which the nonlocal quadrature
    needs to integrate piecewise-linear functions exactly against ``dF``.
    """

    full_support: bool = True
    warning: str | None = None

    @abstractmethod
    def cdf(self, x):
        ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, size=None):
        ...

    @property
    @abstractmethod
    def mean(self) -> float:
        ...

    @abstractmethod
    def partial_mean(self, lo, hi):
        ...

    @abstractmethod
    def kernel_spec(self) -> tuple[int, float, float, np.ndarray, np.ndarray]:
        """``(kind, p1, p2, values, cumprobs)`` for the compiled simulator."""

    def breakpoints(self) -> np.ndarray:
        """Points where the cdf is not smooth (atoms)."""
        return np.empty(0)

    def upper_quantile(self, q: float = 1 - 1e-12) -> float:
        return float(self.ppf(q))

    def ppf(self, q):
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(JumpDistribution):
    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ModelError(f"exponential rate must be > 0, got {self.rate}")

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-self.rate * x)

    def ppf(self, q):
        return -np.log1p(-np.asarray(q, dtype=float)) / self.rate

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def partial_mean(self, lo, hi):
        # antiderivative of y * r e^{-r y} is -(y + 1/r) e^{-r y}
        lo = np.maximum(np.asarray(lo, dtype=float), 0.0)
        hi = np.maximum(np.asarray(hi, dtype=float), lo)
        r = self.rate
        return (lo + 1 / r) * np.exp(-r * lo) - (hi + 1 / r) * np.exp(-r * hi)

    def kernel_spec(self):
        return KIND_EXPONENTIAL, 1.0 / self.rate, 0.0, np.zeros(1), np.ones(1)


@dataclass(frozen=True)
class Gamma(JumpDistribution):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ModelError(
                f"gamma shape and scale must be > 0, got shape={self.shape}, scale={self.scale}"
            )

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return stats.gamma.cdf(x, self.shape, scale=self.scale)

    def ppf(self, q):
        return stats.gamma.ppf(q, self.shape, scale=self.scale)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    def partial_mean(self, lo, hi):
        # y dF_k(y) = k*scale dF_{k+1}(y)
        lo = np.maximum(np.asarray(lo, dtype=float), 0.0)
        hi = np.maximum(np.asarray(hi, dtype=float), lo)
        g = stats.gamma(self.shape + 1, scale=self.scale)
        return self.mean * (g.sf(lo) - g.sf(hi))

    def kernel_spec(self):
        return KIND_GAMMA, self.shape, self.scale, np.zeros(1), np.ones(1)


_SUPPORT_WARNING = (
    "jump law has finite support; the uniqueness argument assumes F charges "
    "every open subinterval of (0, inf). The solver still runs."
)


class Empirical(JumpDistribution):
    """Finitely supported jump law given by (value, probability) atoms."""

    full_support = False
    warning = _SUPPORT_WARNING

    def __init__(self, points):
        pts = sorted((float(v), float(p)) for v, p in points)
        if not pts:
            raise ModelError("empirical law needs at least one atom")
        values = np.array([v for v, _ in pts])
        probs = np.array([p for _, p in pts])
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ModelError("empirical jump values must be strictly positive")
        if np.any(probs < 0):
            raise ModelError("empirical probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ModelError(f"empirical probabilities must sum to 1, got {probs.sum():.12g}")
        self.values = values
        self.probs = probs / probs.sum()
        self.cumprobs = np.cumsum(self.probs)
        self.cumprobs[-1] = 1.0
        logger.warning(_SUPPORT_WARNING)

    def __repr__(self):
        return f"Empirical({list(zip(self.values.tolist(), self.probs.tolist()))})"

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.values, x, side="right")
        out = np.concatenate([[0.0], self.cumprobs])[idx]
        return out if out.ndim else float(out)

    def ppf(self, q):
        idx = np.searchsorted(self.cumprobs, np.asarray(q, dtype=float), side="left")
        return self.values[np.minimum(idx, len(self.values) - 1)]

    def sample(self, rng, size=None):
        return rng.choice(self.values, size=size, p=self.probs)

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def partial_mean(self, lo, hi):
        cm = np.concatenate([[0.0], np.cumsum(self.values * self.probs)])
        lo_idx = np.searchsorted(self.values, np.asarray(lo, dtype=float), side="right")
        hi_idx = np.searchsorted(self.values, np.asarray(hi, dtype=float), side="right")
        return np.maximum(cm[hi_idx] - cm[lo_idx], 0.0)

    def breakpoints(self):
        return self.values.copy()

    def upper_quantile(self, q=1 - 1e-12):
        return float(self.values[-1])

    def kernel_spec(self):
        return KIND_EMPIRICAL, 0.0, 0.0, self.values.copy(), self.cumprobs.copy()


def make_exponential(rate: float) -> Exponential:
    return Exponential(float(rate))


def make_gamma(shape: float, scale: float) -> Gamma:
    return Gamma(float(shape), float(scale))


def make_empirical(points) -> Empirical:
    return Empirical(points)
