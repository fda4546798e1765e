"""Equilibrium aggregate trading rate.

For fixed terminal rate ``theta`` and exit-mass parameter ``c`` the aggregate
rate solves a backward equation that only looks into the future, so one
backward sweep produces it.  Two scalar consistency conditions then pin
``(theta, c)``:

* ``rho1``: the terminal rate equals the aggregate of individual terminal rates,
* ``rho2``: ``c`` equals the exit kernel at ``T``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _march
from .dist import Empirical, PortfolioDistribution
from .kernels import (EntryExitKernels, build_kernels, compute_phi, compute_psi,
                      cumulative, tail_integral)
from .model import CostParams, TimeGrid, VariantMode, build_grid, validate_params
from .riccati import RiccatiBundle, solve_A

log = logging.getLogger(__name__)

_MODE_CODE = {VariantMode.TRADING: _march.TRADING, VariantMode.DROPOUT: _march.DROPOUT,
              VariantMode.UNCONSTRAINED: _march.UNCONSTRAINED}


class NoBracketError(RuntimeError):
    def __init__(self, msg, scan=None):
        super().__init__(msg)
        self.scan = scan


@dataclass
class BackwardState:
    """Grid values of the backward march."""

    t: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    Phi: np.ndarray
    M: np.ndarray
    K: np.ndarray


def _dist_arrays(dist: PortfolioDistribution):
    if isinstance(dist, Empirical):
        buyers = dist.buyer_sizes
        bprefix = np.concatenate([[0.0], np.cumsum(buyers)])
        return (_march.ATOMIC, np.zeros(4), dist.sellers, buyers, bprefix, 1.0 / dist.n)
    dpar = np.array([dist.seller_mass, dist.seller_rate if dist.seller_mass else 1.0,
                     dist.buyer_mass, dist.buyer_rate if dist.buyer_mass else 1.0])
    empty = np.zeros(0)
    return (_march.ANALYTIC, dpar, empty, empty, np.zeros(1), 0.0)


def _tables(bundle: RiccatiBundle):
    tab = getattr(bundle, "_march_tab", None)
    if tab is None:
        tab = np.ascontiguousarray(np.vstack([bundle.eta_f, bundle.eta_dot_f, bundle.lam_f,
                                              bundle.inv_gap_f, bundle.h_f, bundle.alpha_tilde_f]))
        bundle._march_tab = tab
    return tab


def march(theta: float, c: float, bundle: RiccatiBundle, dist: PortfolioDistribution,
          mode=VariantMode.TRADING) -> BackwardState:
    mode = VariantMode.parse(mode)
    kind, dpar, sellers, buyers, bprefix, inv_n = _dist_arrays(dist)
    p = bundle.params
    out = _march.march_kernel(float(theta), float(c), _MODE_CODE[mode], kind, dpar, sellers,
                              buyers, bprefix, inv_n, p.kappa, p.delta, bundle.t_f,
                              _tables(bundle))
    return BackwardState(bundle.t, out[:, 0], out[:, 1], out[:, 2], out[:, 3], out[:, 4])


def solve_backward(theta, c, bundle, params=None, dist=None, mode=VariantMode.TRADING):
    """Aggregate rate for given (theta, c) from the backward march."""
    return march(theta, c, bundle, dist, mode).mu


def effective_Q(c: float, dist: PortfolioDistribution, mode) -> float:
    """Seller-side term of the terminal condition.

    Under drop-out all buyers trade over the whole horizon and each adds
    ``-c`` to the terminal aggregate; without constraints every player does.
    """
    mode = VariantMode.parse(mode)
    if mode is VariantMode.UNCONSTRAINED:
        return c
    val = float(dist.bigQ(c))
    if mode is VariantMode.DROPOUT:
        val += c * dist.buyer_mass
    return val


def c_upper(dist: PortfolioDistribution, mode) -> float:
    """Exclusive upper end of the exit-mass parameter search."""
    mode = VariantMode.parse(mode)
    m = dist.mean
    if mode is VariantMode.UNCONSTRAINED:
        return m
    c_max = dist.qinv_of_mean()
    if not math.isfinite(c_max):
        c_max = dist.q_inverse_integral(m * (1.0 - 1e-12))
    if mode is VariantMode.DROPOUT and dist.buyer_mass > 0:
        c_max = brentq(lambda x: effective_Q(x, dist, mode) - m, 0.0, c_max, xtol=1e-15)
    return c_max


def rho1_from_state(theta, c, state: BackwardState, bundle, dist, mode) -> float:
    mode = VariantMode.parse(mode)
    val = bundle.eta_T / bundle.alpha_tilde_T * theta - dist.mean + effective_Q(c, dist, mode)
    if mode is VariantMode.TRADING:
        val += float(dist.bigP(-state.psi[0])) - state.K[0]
    return val


def terminal_residual_rho1(theta, c, mu, bundle: RiccatiBundle, params=None, dist=None,
                           mode=VariantMode.TRADING) -> float:
    """rho1 from a given rate via the direct buyer integral.

    The buyer term is int_0^T d/dt[exp(int (A-dk)/eta)] P(-psi) dt; its weight grows
    like (T-t)^-2 while P(-psi) vanishes like (T-t)^2, so the integrand is evaluated
    as a ratio of regular factors with the analytic limit at T.
    """
    mode = VariantMode.parse(mode)
    params = params or bundle.params
    val = bundle.eta_T / bundle.alpha_tilde_T * theta - dist.mean + effective_Q(c, dist, mode)
    if mode is not VariantMode.TRADING or dist.buyer_mass == 0:
        return val
    mu = np.asarray(mu, dtype=float)
    t = bundle.t
    T = params.T
    s = T - t
    psi = compute_psi(mu, bundle, params)
    R = bundle.coarse(bundle.remainder_f)
    I = bundle.coarse(bundle.inv_eta_int_f)
    weight = bundle.alpha_tilde * T**2 * np.exp(2 * R - 2 * bundle.dk * I) / bundle.eta
    ratio = np.empty_like(t)
    ratio[:-1] = dist.bigP(-psi[:-1]) / s[:-1] ** 2
    ratio[-1] = -dist.p_left0 * params.kappa * mu[-1] / (2 * bundle.eta_T)
    return val - float(np.trapezoid(weight * ratio, t))


def exit_mass_residual_rho2(theta, c, mu, bundle: RiccatiBundle, params=None) -> float:
    """c - phi(T) for a given rate."""
    return c - float(compute_phi(mu, bundle, params)[-1])


# ---------------------------------------------------------------- Picard route

def _picard_map(vartheta, theta, c, bundle, params, dist, mode):
    t = bundle.t
    eta = bundle.eta
    kappa = params.kappa
    mu = vartheta / eta
    M = tail_integral(mu, t)
    out = bundle.eta_T * theta + tail_integral(bundle.lam * M, t)
    Phi = tail_integral(bundle.h * kappa * mu, t)
    if mode is VariantMode.UNCONSTRAINED:
        out += tail_integral(kappa * mu, t)
    else:
        # int_t^T q(c - Phi_s) kappa mu_s ds written as a Stieltjes integral of
        # 1/h against Q(c - Phi): only differences of Q enter, never q itself.
        Qvals = dist.bigQ(c - Phi)
        inv_h_mid = 1.0 / bundle.h_f[1::2]
        pieces = np.diff(Qvals) * inv_h_mid
        out += np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
        if mode is VariantMode.DROPOUT:
            out += dist.buyer_mass * tail_integral(kappa * mu, t)
    out -= params.delta * tail_integral(kappa * mu, t)
    if mode is VariantMode.TRADING and dist.buyer_mass > 0:
        psi = compute_psi(mu, bundle, params)
        P = dist.bigP(-psi)
        ig = bundle.inv_gap
        w = bundle.coarse(bundle.w_f)
        first = np.zeros_like(t)
        first[:-1] = P[:-1] / ig[:-1]
        integrand = np.empty_like(t)
        gapf = 1.0 - bundle.dk * w[:-1]
        integrand[:-1] = P[:-1] * gapf / (eta[:-1] * w[:-1] ** 2)
        integrand[-1] = -dist.p_left0 * kappa * mu[-1] / 2.0
        out += -first - tail_integral(integrand, t)
    return out


def solve_backward_picard(theta, c, bundle: RiccatiBundle, params=None, dist=None,
                          mode=VariantMode.TRADING, tol=1e-13, max_iter=2000,
                          return_history=False):
    """Fixed-point iteration on vartheta = eta*mu using the integrated operators."""
    mode = VariantMode.parse(mode)
    params = params or bundle.params
    vt = np.full(bundle.t.size, bundle.eta_T * theta)
    history = []
    for _ in range(max_iter):
        new = _picard_map(vt, theta, c, bundle, params, dist, mode)
        diff = float(np.max(np.abs(new - vt)))
        history.append(diff)
        vt = new
        if diff <= tol * max(1.0, float(np.max(np.abs(vt)))):
            mu = vt / bundle.eta
            return (mu, history) if return_history else mu
    raise RuntimeError(f"Picard iteration did not converge (last change {diff:.3e})")


# ------------------------------------------------------------- root finding

@dataclass
class EquilibriumSolution:
    params: CostParams
    bundle: RiccatiBundle
    dist: PortfolioDistribution
    mode: VariantMode
    theta: float
    c: float
    mu_pos: np.ndarray
    state: BackwardState | None
    kernels: EntryExitKernels
    residuals: dict = field(default_factory=dict)
    scan: list = field(default_factory=list)
    roots: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    sign: float = 1.0
    original_dist: PortfolioDistribution | None = None

    @property
    def t(self):
        return self.bundle.t

    @property
    def mu(self):
        return self.sign * self.mu_pos

    @property
    def trivial(self) -> bool:
        return self.theta == 0.0 and not np.any(self.mu_pos)

    def mass(self) -> float:
        return float(np.trapezoid(self.mu, self.t))


def _inner_theta(c, bundle, dist, mode, xtol):
    hi = dist.mean * bundle.alpha_tilde_T / bundle.eta_T

    def f(theta):
        return rho1_from_state(theta, c, march(theta, c, bundle, dist, mode), bundle, dist, mode)

    f_lo = effective_Q(c, dist, mode) - dist.mean
    if f_lo >= 0:
        return 0.0
    f_hi = f(hi)
    if f_hi <= 0:
        return hi
    return brentq(f, 0.0, hi, xtol=xtol * hi, rtol=1e-15, maxiter=200)


def _outer_value(c, bundle, dist, mode, xtol):
    theta = _inner_theta(c, bundle, dist, mode, xtol)
    st = march(theta, c, bundle, dist, mode)
    return c - st.Phi[0], theta, st


def find_equilibrium(bundle: RiccatiBundle, params: CostParams | None, dist: PortfolioDistribution,
                     mode=VariantMode.TRADING, tol: float = 1e-10, scan_points: int = 32,
                     certificate: str | None = None) -> EquilibriumSolution:
    """Solve rho1 = rho2 = 0 for a seller-dominated distribution."""
    mode = VariantMode.parse(mode)
    params = params or bundle.params
    m = dist.mean
    if not m > 0:
        raise ValueError("find_equilibrium needs a positive mean; reflect or use solve()")
    xtol = 1e-15
    c_max = c_upper(dist, mode)
    grid_c = np.linspace(0.0, c_max, scan_points + 1)
    grid_c[-1] = c_max * (1.0 - 1e-9)
    scan = []
    for cc in grid_c:
        g, theta, _ = _outer_value(cc, bundle, dist, mode, xtol)
        scan.append((float(cc), float(g), float(theta)))
    vals = np.array([s[1] for s in scan])
    brackets = [i for i in range(len(scan) - 1)
                if vals[i] == 0 or np.sign(vals[i]) != np.sign(vals[i + 1])]
    if not brackets:
        raise NoBracketError("outer consistency map does not change sign on the scan", scan)
    roots = []
    for i in brackets:
        a, b = grid_c[i], grid_c[i + 1]
        if vals[i] == 0:
            roots.append(float(a))
            continue
        root = brentq(lambda x: _outer_value(x, bundle, dist, mode, xtol)[0], a, b,
                      xtol=1e-15 * max(1.0, c_max), rtol=1e-15, maxiter=200)
        roots.append(float(root))
    notes = []
    if len(roots) > 1:
        msg = f"{len(roots)} roots of the outer map: {roots}; returning the smallest"
        log.warning(msg)
        notes.append(msg)
    c = min(roots)
    g, theta, st = _outer_value(c, bundle, dist, mode, xtol)
    mu = st.mu
    if certificate is None:
        certificate = validate_params(params).certificate
    kern = build_kernels(mu, bundle, params, certificate=certificate)
    monotone_outer = bool(np.all(np.diff(vals) > 0))
    residuals = {
        "rho1": rho1_from_state(theta, c, st, bundle, dist, mode),
        "rho2": float(g),
        "rho1_quadrature": terminal_residual_rho1(theta, c, mu, bundle, params, dist, mode),
        "rho2_quadrature": exit_mass_residual_rho2(theta, c, mu, bundle, params),
        "mass_error": float(np.trapezoid(mu, bundle.t)) - m,
        "outer_monotone": monotone_outer,
    }
    scale = tol * max(1.0, m)
    if abs(residuals["rho1"]) > scale or abs(residuals["rho2"]) > scale:
        notes.append("root residuals above tolerance")
    return EquilibriumSolution(params, bundle, dist, mode, float(theta), float(c), mu, st, kern,
                               residuals, scan, roots, notes)


def trivial_solution(bundle, params, dist, mode) -> EquilibriumSolution:
    mu = np.zeros(bundle.t.size)
    kern = build_kernels(mu, bundle, params, require_monotone=False)
    st = BackwardState(bundle.t, mu, mu.copy(), mu.copy(), mu.copy(), mu.copy())
    return EquilibriumSolution(params, bundle, dist, VariantMode.parse(mode), 0.0, 0.0, mu, st,
                               kern, {"rho1": 0.0, "rho2": 0.0, "mass_error": 0.0},
                               notes=["zero mean: trivial equilibrium, sign-changing rates not searched"],
                               original_dist=dist)


def solve(params: CostParams, dist: PortfolioDistribution, mode=VariantMode.TRADING,
          grid: TimeGrid | None = None, tol: float = 1e-10, bundle: RiccatiBundle | None = None,
          scan_points: int = 32) -> EquilibriumSolution:
    """Solve for any sign of the mean, reflecting buyer-dominated markets."""
    if bundle is None:
        grid = grid or build_grid(params.T)
        bundle = solve_A(params, grid)
    m = dist.mean
    if abs(m) <= 1e-14 * max(1.0, dist.abs_moment):
        return trivial_solution(bundle, params, dist, mode)
    oriented = dist if m > 0 else dist.reflect()
    sol = find_equilibrium(bundle, params, oriented, mode, tol, scan_points)
    sol.original_dist = dist
    if m < 0:
        sol.sign = -1.0
        sol.notes.append("buyer-dominated: solved the reflected market")
    return sol


def fixed_point_selfcheck(sol: EquilibriumSolution, aggregate=None, strata: int = 512) -> float:
    """sup_t |F(mu*) - mu*| with F the aggregated best responses."""
    if aggregate is None:
        from .paths import aggregate_F as aggregate
    F = aggregate(sol, strata=strata)
    return float(np.max(np.abs(F - sol.mu)))
