"""Initial-position distributions and their tail functionals.

Conventions: ``p(x)`` is the mass of ``(-inf, x]`` and ``q(x)`` the mass of
``[x, inf)``.  Players starting at exactly zero never trade, so a zero atom
is left out of both.  Outside their natural half-lines the functions are
extended by constants (``p``, ``q``) or linearly (``P``, ``Q``), which keeps
them Lipschitz for root-finding away from equilibrium.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class PortfolioDistribution:
    atomic = False

    # scalar mass bookkeeping, filled in by subclasses
    seller_mass: float
    buyer_mass: float

    @property
    def zero_mass(self) -> float:
        return max(0.0, 1.0 - self.seller_mass - self.buyer_mass)

    @property
    def mean(self) -> float:
        return self.seller_limit - self.buyer_limit

    @property
    def abs_moment(self) -> float:
        return self.seller_limit + self.buyer_limit

    def qinv_of_mean(self) -> float:
        """Upper end of the search interval for the exit-mass parameter.

        Returns ``inf`` when there are no buyers, since then the mean equals
        ``lim Q`` and the inverse is not attained in the interior.
        """
        m = self.mean
        if not m > 0:
            raise ValueError("qinv_of_mean needs a strictly positive mean")
        if self.buyer_mass == 0:
            return math.inf
        return self.q_inverse_integral(m)

    # vectorised helpers shared by subclasses
    def ell_identity(self, x):
        x = np.asarray(x, dtype=float)
        return x * self.p(x) - self.bigP(x)

    def strata_buyers(self, lo: float, hi: float, n: int):
        """Equal-mass strata of the buyers in ``[lo, hi]`` (both <= 0).

        Returns the conditional means and masses of the strata.
        """
        m_lo, m_hi = float(self.p(lo)), float(self.p(hi))
        if n <= 0 or m_hi - m_lo <= 0:
            return np.empty(0), np.empty(0)
        levels = np.linspace(m_lo, m_hi, n + 1)
        edges = self.p_inverse(levels)
        edges[0], edges[-1] = lo, hi
        mass = np.diff(self.p(edges))
        xp = edges * self.p(edges) - self.bigP(edges)
        first = np.diff(xp)
        keep = mass > 0
        return first[keep] / mass[keep], mass[keep]

    def strata_sellers(self, lo: float, hi: float, n: int):
        """Equal-mass strata of the sellers in ``[lo, hi]`` (both >= 0)."""
        m_lo, m_hi = float(self.q(lo)), float(self.q(hi))
        if n <= 0 or m_lo - m_hi <= 0:
            return np.empty(0), np.empty(0)
        levels = np.linspace(m_lo, m_hi, n + 1)
        edges = self.q_inverse(levels)
        edges[0], edges[-1] = lo, hi
        mass = -np.diff(self.q(edges))
        xq = self.bigQ(edges) - edges * self.q(edges)
        first = np.diff(xq)
        keep = mass > 0
        return first[keep] / mass[keep], mass[keep]


@dataclass(frozen=True)
class ExpMixture(PortfolioDistribution):
    """Exponential tails on each side plus an optional atom at zero.

    ``q(x) = seller_mass * exp(-seller_rate * x)`` for ``x > 0`` and
    ``p(x) = buyer_mass * exp(buyer_rate * x)`` for ``x < 0``.
    """

    seller_mass: float = 0.8
    seller_rate: float = 2.0 / 3.0
    buyer_mass: float = 0.2
    buyer_rate: float = 1.0

    def __post_init__(self):
        for name in ("seller_mass", "buyer_mass"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.seller_mass + self.buyer_mass > 1 + 1e-12:
            raise ValueError("seller_mass + buyer_mass must not exceed 1")
        if self.seller_mass > 0 and not self.seller_rate > 0:
            raise ValueError("seller_rate must be positive")
        if self.buyer_mass > 0 and not self.buyer_rate > 0:
            raise ValueError("buyer_rate must be positive")

    @property
    def seller_limit(self) -> float:
        return self.seller_mass / self.seller_rate if self.seller_mass else 0.0

    @property
    def buyer_limit(self) -> float:
        return self.buyer_mass / self.buyer_rate if self.buyer_mass else 0.0

    @property
    def p_left0(self) -> float:
        return self.buyer_mass

    def p(self, x):
        x = np.minimum(np.asarray(x, dtype=float), 0.0)
        if not self.buyer_mass:
            return np.zeros_like(x)
        return self.buyer_mass * np.exp(self.buyer_rate * x)

    def q(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        if not self.seller_mass:
            return np.zeros_like(x)
        return self.seller_mass * np.exp(-self.seller_rate * x)

    def bigQ(self, x):
        x = np.asarray(x, dtype=float)
        if not self.seller_mass:
            return np.zeros_like(x)
        r = self.seller_rate
        pos = -np.expm1(-r * np.maximum(x, 0.0)) * (self.seller_mass / r)
        return np.where(x >= 0, pos, self.seller_mass * x)

    def bigP(self, x):
        x = np.asarray(x, dtype=float)
        if not self.buyer_mass:
            return np.zeros_like(x)
        r = self.buyer_rate
        neg = np.expm1(r * np.minimum(x, 0.0)) * (self.buyer_mass / r)
        return np.where(x <= 0, neg, self.buyer_mass * x)

    def ell(self, x):
        x = np.minimum(np.asarray(x, dtype=float), 0.0)
        if not self.buyer_mass:
            return np.zeros_like(x)
        r = self.buyer_rate
        return self.buyer_mass * (x * np.exp(r * x) - np.expm1(r * x) / r)

    def p_inverse(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return np.minimum(np.log(u / self.buyer_mass) / self.buyer_rate, 0.0)

    def q_inverse(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return np.maximum(-np.log(u / self.seller_mass) / self.seller_rate, 0.0)

    def q_inverse_integral(self, y: float) -> float:
        frac = y * self.seller_rate / self.seller_mass
        if frac >= 1:
            return math.inf
        return -math.log1p(-frac) / self.seller_rate

    def quantile(self, u):
        """Inverse CDF, used to place representative players."""
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        lo = u < self.buyer_mass
        hi = u > self.buyer_mass + self.zero_mass
        if self.buyer_mass:
            out[lo] = np.log(u[lo] / self.buyer_mass) / self.buyer_rate
        if self.seller_mass:
            out[hi] = -np.log((1.0 - u[hi]) / self.seller_mass) / self.seller_rate
        return out

    def reflect(self) -> "ExpMixture":
        return ExpMixture(self.buyer_mass, self.buyer_rate, self.seller_mass, self.seller_rate)


@dataclass(frozen=True)
class Empirical(PortfolioDistribution):
    """Uniform distribution over a finite list of initial positions."""

    positions: tuple = field(default_factory=tuple)
    atomic = True

    def __post_init__(self):
        pos = tuple(float(x) for x in np.ravel(self.positions))
        if not pos:
            raise ValueError("empirical distribution needs at least one position")
        if not all(math.isfinite(x) for x in pos):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.positions)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def sellers(self) -> np.ndarray:
        """Positive positions, ascending."""
        x = self.x
        return np.sort(x[x > 0])

    @property
    def buyer_sizes(self) -> np.ndarray:
        """Absolute values of the negative positions, ascending."""
        x = self.x
        return np.sort(-x[x < 0])

    @property
    def seller_mass(self) -> float:
        return self.sellers.size / self.n

    @property
    def buyer_mass(self) -> float:
        return self.buyer_sizes.size / self.n

    @property
    def seller_limit(self) -> float:
        return float(self.sellers.sum()) / self.n

    @property
    def buyer_limit(self) -> float:
        return float(self.buyer_sizes.sum()) / self.n

    @property
    def mean(self) -> float:
        return float(np.mean(self.x))

    @property
    def p_left0(self) -> float:
        return 0.0

    def p(self, x):
        x = np.asarray(x, dtype=float)
        b = self.buyer_sizes
        # buyers with -x_i >= -x, i.e. x_i <= x; every buyer counts for x >= 0
        cnt = b.size - np.searchsorted(b, np.maximum(-x, 0.0), side="left")
        cnt = np.where(x >= 0, b.size, cnt)
        return cnt / self.n

    def q(self, x):
        x = np.asarray(x, dtype=float)
        s = self.sellers
        cnt = s.size - np.searchsorted(s, x, side="left")
        cnt = np.where(x <= 0, s.size, cnt)
        return cnt / self.n

    def bigQ(self, x):
        x = np.asarray(x, dtype=float)
        s = self.sellers
        xc = np.maximum(x, 0.0)
        pos = np.minimum(s[None, :], np.reshape(xc, (-1, 1))).sum(axis=1).reshape(x.shape) / self.n
        return np.where(x >= 0, pos, self.seller_mass * x)

    def bigP(self, x):
        x = np.asarray(x, dtype=float)
        b = self.buyer_sizes
        xc = np.maximum(-x, 0.0)
        neg = -np.minimum(b[None, :], np.reshape(xc, (-1, 1))).sum(axis=1).reshape(x.shape) / self.n
        return np.where(x <= 0, neg, self.buyer_mass * x)

    def ell(self, x):
        x = np.asarray(x, dtype=float)
        b = self.buyer_sizes
        m = np.reshape(np.maximum(-x, 0.0), (-1, 1))
        out = np.where(b[None, :] <= m, b[None, :], 0.0).sum(axis=1).reshape(x.shape) / self.n
        return out

    def q_inverse_integral(self, y: float) -> float:
        s = self.sellers
        kinks = np.concatenate([[0.0], s])
        vals = self.bigQ(kinks)
        if y >= vals[-1]:
            return math.inf
        return float(np.interp(y, vals, kinks))

    def reflect(self) -> "Empirical":
        return Empirical(tuple(-x for x in self.positions))

    @classmethod
    def from_quantiles(cls, base: ExpMixture, n: int) -> "Empirical":
        """N players at the mid-quantiles of ``base``."""
        u = (np.arange(n) + 0.5) / n
        return cls(tuple(base.quantile(u)))
