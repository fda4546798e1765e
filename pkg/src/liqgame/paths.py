"""Individual best responses and their aggregate.

Every trading player follows xi = (A - dk)(X + psi_tau)/eta on its trading
interval.  Solving that linear ODE gives, with E(t) = exp(int_0^t (A-dk)/eta),

    xi_t = alpha_tilde_t / eta_t * [ (x + psi_tau(s0)) E(s0) + C_tau(t) - C_tau(s0) ]

where s0 is the entry time and C_tau(t) = int_0^t (lam psi_tau - kappa mu)/alpha_tilde.
All factors are bounded up to T, so no singular quantity is evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .dist import Empirical
from .equilibrium import EquilibriumSolution
from .kernels import (EntryExitKernels, build_kernels, cumulative, entry_time, exit_time,
                      tail_integral)
from .model import CostParams, VariantMode
from .riccati import RiccatiBundle


@dataclass
class PlayerPath:
    x0: float
    sigma: float
    tau: float
    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    xi: np.ndarray
    cost: float = float("nan")

    def rows(self):
        return np.column_stack([self.t, self.X, self.Y, self.xi])


class ResponseTables:
    """Quantities shared by all players facing a fixed non-negative rate ``mu``."""

    def __init__(self, mu, bundle: RiccatiBundle, mode=VariantMode.TRADING,
                 kernels: EntryExitKernels | None = None):
        self.bundle = bundle
        self.params = params = bundle.params
        self.mode = VariantMode.parse(mode)
        self.t = t = bundle.t
        self.mu = mu = np.asarray(mu, dtype=float)
        self.kernels = kernels or build_kernels(mu, bundle, params, require_monotone=False)
        kappa = params.kappa
        self.alpha = bundle.alpha
        self.alpha_tilde = bundle.alpha_tilde
        self.eta = bundle.eta
        self.lam = bundle.lam
        self.decay_tilde = bundle.decay_tilde
        self.psi = self.kernels.psi
        self.G = tail_integral(bundle.decay * kappa * mu, t)
        drift = (self.lam * self.psi - kappa * mu) / self.alpha_tilde
        self.C = cumulative(drift, t)
        dgain = self.lam / (self.alpha * self.alpha_tilde)
        self.D = cumulative(dgain, t)
        self._C_spline = CubicHermiteSpline(t, self.C, drift)
        self._G_spline = CubicHermiteSpline(t, self.G, -bundle.decay * kappa * mu)
        self.rate_factor = self.alpha_tilde / self.eta

    # --- timing
    def sigma(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.mode is not VariantMode.TRADING:
            return np.zeros_like(x)
        return entry_time(x, self.kernels)

    def tau(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.mode is VariantMode.UNCONSTRAINED:
            return np.full_like(x, self.params.T)
        return exit_time(x, self.kernels)

    # --- vectorised rates, one row per player
    def buyer_rates(self, x):
        """Rates and positions of buyers at positions ``x`` (< 0)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        sig = self.sigma(x)
        t = self.t
        C_sig = self._C_spline(sig)
        late = sig > 0
        offset = np.where(late, 0.0, x + self.psi[0])
        # late entrants: psi(sigma) = -x, so the first term vanishes
        bracket = offset[:, None] + self.C[None, :] - C_sig[:, None]
        active = t[None, :] >= sig[:, None]
        xi = np.where(active, self.rate_factor[None, :] * bracket, 0.0)
        X = np.where(active, self.decay_tilde[None, :] * bracket - self.psi[None, :], x[:, None])
        X[:, -1] = 0.0
        return sig, xi, X

    def seller_rates(self, x):
        """Rates and positions of sellers at positions ``x`` (> 0)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        tau = self.tau(x)
        t = self.t
        G_tau = np.where(tau >= self.params.T, 0.0, self._G_spline(tau))
        psi_tau = (self.G[None, :] - G_tau[:, None]) / self.alpha[None, :]
        bracket = (x + psi_tau[:, 0])[:, None] + self.C[None, :] - G_tau[:, None] * self.D[None, :]
        active = t[None, :] <= tau[:, None]
        xi = np.where(active, self.rate_factor[None, :] * bracket, 0.0)
        X = np.where(active, self.decay_tilde[None, :] * bracket - psi_tau, 0.0)
        X[:, -1] = 0.0
        return tau, xi, X

    def path(self, x0: float) -> PlayerPath:
        t = self.t
        dk = self.bundle.dk
        if x0 == 0 and self.mode is not VariantMode.UNCONSTRAINED:
            zero = np.zeros_like(t)
            return PlayerPath(0.0, 0.0, 0.0, t, zero, zero.copy(), zero.copy())
        if x0 < 0:
            sig, xi, X = self.buyer_rates([x0])
            sigma, tau = float(sig[0]), self.params.T
        else:
            tt, xi, X = self.seller_rates([x0])
            sigma, tau = 0.0, float(tt[0])
        xi, X = xi[0], X[0]
        Y = self.eta * xi + dk * X
        return PlayerPath(float(x0), sigma, tau, t, X, Y, xi)

    # --- aggregation
    def _linear_group(self, mass, first):
        """Aggregate rate of a group all entering at 0 and leaving at T."""
        return self.rate_factor * (first + mass * (self.psi[0] + self.C))

    def aggregate(self, dist, strata: int = 512) -> np.ndarray:
        mode = self.mode
        F = np.zeros_like(self.t)
        if isinstance(dist, Empirical):
            x = dist.x
            if mode is VariantMode.UNCONSTRAINED:
                return self._linear_group(1.0, float(x.mean()))
            buyers = x[x < 0]
            sellers = x[x > 0]
            if buyers.size:
                F += self.buyer_rates(buyers)[1].sum(axis=0)
            if sellers.size:
                F += self.seller_rates(sellers)[1].sum(axis=0)
            return F / dist.n
        if mode is VariantMode.UNCONSTRAINED:
            return self._linear_group(1.0, dist.mean)
        # buyers: immediate entrants are affine in x, late entrants are stratified
        if dist.buyer_mass > 0:
            a = -self.psi[0] if mode is VariantMode.TRADING else 0.0
            mass = float(dist.p(a))
            first = a * mass - float(dist.bigP(a)) - dist.buyer_limit
            if mass > 0:
                F += self._linear_group(mass, first)
            if a < 0:
                reps, w = dist.strata_buyers(a, 0.0, strata)
                if reps.size:
                    F += w @ self.buyer_rates(reps)[1]
        if dist.seller_mass > 0:
            b = self.kernels.phi_at_T
            mass = float(dist.q(b))
            first = b * mass + dist.seller_limit - float(dist.bigQ(b))
            if mass > 0:
                F += self._linear_group(mass, first)
            if b > 0:
                reps, w = dist.strata_sellers(0.0, b, strata)
                if reps.size:
                    F += w @ self.seller_rates(reps)[1]
        return F


def _tables(sol: EquilibriumSolution) -> ResponseTables:
    tab = getattr(sol, "_response_tables", None)
    if tab is None:
        tab = ResponseTables(sol.mu_pos, sol.bundle, sol.mode, sol.kernels)
        sol._response_tables = tab
    return tab


def player_path(x0: float, sol: EquilibriumSolution, with_cost: bool = True) -> PlayerPath:
    """Best response of a player starting at ``x0`` (any sign) to the equilibrium rate."""
    tab = _tables(sol)
    if sol.trivial and x0 == 0:
        zero = np.zeros_like(sol.t)
        return PlayerPath(0.0, 0.0, 0.0, sol.t, zero, zero.copy(), zero.copy(), 0.0)
    path = tab.path(sol.sign * x0)
    if sol.sign < 0:
        path = PlayerPath(x0, path.sigma, path.tau, path.t, -path.X, -path.Y, -path.xi)
    if with_cost:
        path.cost = evaluate_cost(path, sol.mu, sol.params)
    return path


def buyer_path(x: float, sol: EquilibriumSolution, bundle=None, params=None) -> PlayerPath:
    if not x < 0:
        raise ValueError("buyer_path expects a negative position")
    return player_path(x, sol)


def seller_path(x: float, sol: EquilibriumSolution, bundle=None, params=None) -> PlayerPath:
    if not x > 0:
        raise ValueError("seller_path expects a positive position")
    return player_path(x, sol)


def positions_from_rates(x0, xi, t):
    return x0 - cumulative(xi, t)


def evaluate_cost(path: PlayerPath, mu, params: CostParams, n_players: int | None = None,
                  base_xi=None) -> float:
    """Expected cost of ``path`` against the aggregate rate ``mu``.

    With ``n_players`` the player's own deviation from ``base_xi`` feeds back
    into the aggregate with weight 1/N, opponents held fixed.
    """
    t = path.t
    mu = np.asarray(mu, dtype=float)
    if mu.shape != t.shape:
        raise ValueError("path and rate live on different grids")
    eta = params.eta_at(t)
    lam = params.lam_at(t)
    agg = mu
    if n_players is not None and base_xi is not None:
        agg = mu + (path.xi - np.asarray(base_xi)) / n_players
    integrand = 0.5 * eta * path.xi**2 + params.kappa * agg * path.X + 0.5 * lam * path.X**2
    return float(np.trapezoid(integrand, t))


def aggregate_F(sol: EquilibriumSolution, strata: int = 512, mu=None) -> np.ndarray:
    """Aggregate best response F(mu) (default: the equilibrium rate)."""
    if mu is None:
        tab = _tables(sol)
    else:
        tab = ResponseTables(sol.sign * np.asarray(mu, dtype=float), sol.bundle, sol.mode)
    return sol.sign * tab.aggregate(sol.dist, strata)
