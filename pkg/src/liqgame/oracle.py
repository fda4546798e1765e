"""Independent checks: a discrete best-response QP, Nash deviation tests and
finite-difference sensitivities of the parameterised backward equation.

None of these routines use the explicit path formulas, so agreement with
``paths`` is a genuine cross-validation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dist import Empirical, PortfolioDistribution
from .equilibrium import (EquilibriumSolution, _inner_theta, march, rho1_from_state)
from .kernels import cumulative
from .model import CostParams, VariantMode
from .paths import PlayerPath, evaluate_cost, player_path
from .riccati import RiccatiBundle


class OracleDidNotConverge(RuntimeError):
    pass


@dataclass
class DiscreteBestResponse:
    x0: float
    t: np.ndarray  # coarse nodes, rates live on the intervals between them
    rates: np.ndarray
    positions: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int

    def first_active_time(self, tol: float = 1e-9) -> float:
        """Start of the first interval with a non-negligible rate."""
        scale = abs(self.x0) / (self.t[-1] - self.t[0])
        idx = np.flatnonzero(np.abs(self.rates) > tol * max(scale, 1e-300))
        return float(self.t[idx[0]]) if idx.size else float(self.t[-1])

    def last_active_time(self, tol: float = 1e-9) -> float:
        scale = abs(self.x0) / (self.t[-1] - self.t[0])
        idx = np.flatnonzero(np.abs(self.rates) > tol * max(scale, 1e-300))
        return float(self.t[idx[-1] + 1]) if idx.size else float(self.t[0])


def project_simplex(v, total):
    """Euclidean projection of ``v`` onto {z >= 0, sum z = total}."""
    if total <= 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    shift = css[rho] / (rho + 1)
    return np.maximum(v - shift, 0.0)


class _DiscreteProblem:
    """Objective for piecewise-constant rates and piecewise-linear positions.

    Integrals of mu*X and X^2 over each interval are exact for linear mu, so
    the only discretisation is the rate space itself.
    """

    def __init__(self, x0, t_coarse, mu_coarse, params: CostParams, agg_weight=0.0, base=None):
        self.x0 = float(x0)
        self.t = t = t_coarse
        self.dt = dt = np.diff(t)
        mid = 0.5 * (t[:-1] + t[1:])
        self.eta = params.eta_at(mid) * np.ones_like(mid)
        self.lam = params.lam_at(mid) * np.ones_like(mid)
        self.kappa = params.kappa
        self.mu = np.asarray(mu_coarse, dtype=float)
        # N-player self-feedback: aggregate = mu + w*(rates - base)
        self.w = agg_weight
        self.base = np.zeros_like(dt) if base is None else np.asarray(base, dtype=float)

    def positions(self, r):
        return self.x0 - np.concatenate([[0.0], np.cumsum(r * self.dt)])

    def objective(self, r):
        X = self.positions(r)
        a, b = X[:-1], X[1:]
        ma, mb = self.mu[:-1], self.mu[1:]
        dt = self.dt
        own = 0.5 * np.sum(self.eta * r * r * dt)
        impact = self.kappa * np.sum(dt * (ma * a / 3 + (ma * b + mb * a) / 6 + mb * b / 3))
        if self.w:
            extra = self.w * (r - self.base)
            impact += self.kappa * np.sum(dt * extra * 0.5 * (a + b))
        inv = 0.5 * np.sum(self.lam * dt * (a * a + a * b + b * b) / 3)
        return float(own + impact + inv)

    def gradient(self, r):
        X = self.positions(r)
        a, b = X[:-1], X[1:]
        dt = self.dt
        ma, mb = self.mu[:-1], self.mu[1:]
        # derivative of the objective with respect to node positions
        dX = np.zeros_like(X)
        dX[:-1] += self.kappa * dt * (ma / 3 + mb / 6) + self.lam * dt * (2 * a + b) / 6
        dX[1:] += self.kappa * dt * (ma / 6 + mb / 3) + self.lam * dt * (a + 2 * b) / 6
        g = self.eta * r * dt
        if self.w:
            extra = self.w * (r - self.base)
            dX[:-1] += 0.5 * self.kappa * dt * extra
            dX[1:] += 0.5 * self.kappa * dt * extra
            g = g + self.kappa * dt * self.w * 0.5 * (a + b)
        # X_k depends on r_j for j < k with weight -dt_j
        tail = np.cumsum(dX[::-1])[::-1]
        return g - dt * tail[1:]

    def lipschitz(self):
        n = self.dt.size
        dt = self.dt.max()
        bound = self.eta.max() * dt + self.lam.max() * dt**3 * n * (n + 1) / 2
        if self.w:
            bound += self.kappa * self.w * dt**2 * n
        return bound


def best_response_qp(x0: float, t, mu, params: CostParams, coarse_n: int = 200,
                     max_iter: int = 200000, tol: float = 1e-12, n_players: int | None = None,
                     base_rates=None) -> DiscreteBestResponse:
    """Minimise the discretised cost over admissible piecewise-constant rates.

    Projected gradient with a fixed 1/L step: the problem is strongly convex
    and well conditioned, so the iteration converges linearly.  The
    constraint set {sign(x0) r >= 0, sum r dt = x0} on a uniform grid is a
    scaled simplex and is projected onto exactly.
    """
    if coarse_n < 50:
        raise ValueError("coarse_n must be at least 50")
    T = float(t[-1])
    tc = np.linspace(0.0, T, coarse_n + 1)
    mu_c = np.interp(tc, t, mu)
    if x0 == 0:
        r = np.zeros(coarse_n)
        return DiscreteBestResponse(0.0, tc, r, np.zeros_like(tc), 0.0, 0.0, 0)
    weight = 0.0 if n_players is None else 1.0 / n_players
    prob = _DiscreteProblem(x0, tc, mu_c, params, weight, base_rates)
    dt = T / coarse_n
    s = np.sign(x0)
    total = abs(x0) / dt
    z = np.full(coarse_n, total / coarse_n)
    step = 1.0 / prob.lipschitz()
    kkt = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = s * prob.gradient(s * z)
        z_new = project_simplex(z - step * g, total)
        moved = np.max(np.abs(z_new - z))
        z = z_new
        if it % 50 == 0 or moved <= tol * total:
            kkt = _kkt_residual(z, s * prob.gradient(s * z), dt)
            if kkt <= tol * max(1.0, abs(x0)):
                break
    else:
        raise OracleDidNotConverge(f"projected gradient stalled with KKT residual {kkt:.3g}")
    r = s * z
    return DiscreteBestResponse(float(x0), tc, r, prob.positions(r), prob.objective(r), kkt, it)


def _kkt_residual(z, g, dt):
    """Stationarity violation for min f(z) on a simplex, per unit interval length."""
    support = z > 0
    g = g / dt
    nu = np.mean(g[support]) if support.any() else np.min(g)
    on = np.max(np.abs(g[support] - nu)) if support.any() else 0.0
    off = np.max(np.maximum(nu - g[~support], 0.0)) if (~support).any() else 0.0
    return float(max(on, off))


def discrete_objective(x0, rates, t, mu, params: CostParams, coarse_n: int = 200,
                       n_players=None, base_rates=None) -> float:
    T = float(t[-1])
    tc = np.linspace(0.0, T, coarse_n + 1)
    weight = 0.0 if n_players is None else 1.0 / n_players
    prob = _DiscreteProblem(x0, tc, np.interp(tc, t, mu), params, weight, base_rates)
    return prob.objective(rates)


def coarse_rates(path: PlayerPath, coarse_n: int = 200) -> np.ndarray:
    """Interval averages of a fine-grid rate, i.e. the exact position increments."""
    T = float(path.t[-1])
    tc = np.linspace(0.0, T, coarse_n + 1)
    traded = cumulative(path.xi, path.t)
    return np.diff(np.interp(tc, path.t, traded)) / np.diff(tc)


# --- Nash deviation tests

def cost_scale(x0: float, params: CostParams) -> float:
    """Cost of liquidating |x0| at a constant rate with no impact from others."""
    return 0.5 * float(np.max(params.eta_at(np.linspace(0, params.T, 5)))) * x0 * x0 / params.T


def _admissible(xi, x0, t):
    """Clip to the sign constraint and rescale so positions end exactly at zero."""
    s = np.sign(x0)
    xi = s * np.maximum(s * xi, 0.0)
    traded = float(np.trapezoid(xi, t))
    if traded == 0:
        return np.full_like(t, x0 / t[-1])
    return xi * (x0 / traded)


def _path_from_rates(x0, xi, t):
    X = x0 - cumulative(xi, t)
    X[-1] = 0.0
    return PlayerPath(float(x0), 0.0, float(t[-1]), t, X, np.full_like(t, np.nan), xi)


def random_bump(rng: np.random.Generator, t, amplitude: float, knots: int = 6):
    """Random piecewise-linear function with zero boundary values."""
    T = float(t[-1])
    inner = np.sort(rng.uniform(0.0, T, knots))
    nodes = np.concatenate([[0.0], inner, [T]])
    vals = np.concatenate([[0.0], rng.normal(0.0, amplitude, knots), [0.0]])
    if rng.random() < 0.5:
        vals[0] = rng.normal(0.0, amplitude)
    return np.interp(t, nodes, vals)


@dataclass
class DeviationReport:
    game: str
    seed: int
    samples: int
    players: list
    min_gain: float  # min over samples of (J(deviation) - J(equilibrium)) / scale
    worst: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.min_gain >= -1e-6

    def lines(self):
        yield f"game={self.game} seed={self.seed} samples_per_player={self.samples}"
        yield f"players={len(self.players)} min_scaled_gain={self.min_gain:.6e}"
        yield f"status={'PASS' if self.passed else 'FAIL'}"


def nash_deviation_test(sol: EquilibriumSolution, samples: int = 100, seed: int = 0,
                        players=None, n_players: int | None = None,
                        zero_perturbation: bool = False) -> DeviationReport:
    """Search for profitable unilateral deviations from the equilibrium paths.

    With ``n_players`` the aggregate seen by the deviator moves by the change
    in its own rate divided by N; otherwise (mean-field game) it is frozen.
    """
    rng = np.random.default_rng(seed)
    t = sol.t
    if players is None:
        if isinstance(sol.original_dist, Empirical):
            players = [float(v) for v in np.unique(sol.original_dist.x) if v != 0]
        else:
            raise ValueError("players must be given for a continuous distribution")
    min_gain = np.inf
    worst = {}
    for x0 in players:
        eq = player_path(x0, sol, with_cost=False)
        base_xi = _admissible(eq.xi, x0, t)
        base = _path_from_rates(x0, base_xi, t)
        J0 = evaluate_cost(base, sol.mu, sol.params, n_players, base_xi)
        scale = cost_scale(x0, sol.params)
        amp = float(np.max(np.abs(base_xi))) + abs(x0) / sol.params.T
        for _ in range(samples):
            if zero_perturbation:
                bump = np.zeros_like(t)
            else:
                bump = random_bump(rng, t, amp * 10.0 ** rng.uniform(-3, 0))
            xi = _admissible(base_xi + bump, x0, t)
            J = evaluate_cost(_path_from_rates(x0, xi, t), sol.mu, sol.params, n_players, base_xi)
            gain = (J - J0) / scale
            if gain < min_gain:
                min_gain = gain
                worst = {"x0": x0, "J_eq": J0, "J_dev": J}
    game = "mfg" if n_players is None else f"nplayer-{n_players}"
    return DeviationReport(game, seed, samples, list(players), float(min_gain), worst)


# --- finite-difference sensitivities

@dataclass
class SensitivityReport:
    theta: float
    c: float
    bump: float
    min_dtheta: float
    max_dc: float
    eta_T: float
    rho1_sweep: np.ndarray
    rho1_increasing: bool
    drho2_dc: float
    outer_increasing: bool

    @property
    def passed(self) -> bool:
        return (self.min_dtheta >= self.eta_T * (1 - 1e-2) and self.max_dc <= 1e-6
                and self.rho1_increasing and self.outer_increasing)

    def lines(self):
        yield f"theta={self.theta:.17g} c={self.c:.17g} bump={self.bump:g}"
        yield f"min_dvartheta_dtheta={self.min_dtheta:.6e} bound={self.eta_T * (1 - 1e-2):.6e}"
        yield f"max_dvartheta_dc={self.max_dc:.6e}"
        yield f"rho1_increasing={self.rho1_increasing} drho2_dc={self.drho2_dc:.6e}"
        yield f"status={'PASS' if self.passed else 'FAIL'}"


def sensitivity_check(bundle: RiccatiBundle, params: CostParams, dist: PortfolioDistribution,
                      theta: float, c: float, bump: float = 1e-4,
                      mode=VariantMode.TRADING, sweep: int = 16) -> SensitivityReport:
    if not theta > 0:
        raise ValueError("theta must be positive")
    mode = VariantMode.parse(mode)
    eta = bundle.eta

    def vartheta(th, cc):
        return march(th, cc, bundle, dist, mode).mu * eta

    ht = bump * theta
    d_theta = (vartheta(theta + ht, c) - vartheta(theta - ht, c)) / (2 * ht)
    hc = bump * max(c, 1.0)
    c_lo = max(c - hc, 0.0)
    d_c = (vartheta(theta, c + hc) - vartheta(theta, c_lo)) / (c + hc - c_lo)
    interior = slice(1, -1)

    theta_max = dist.mean * bundle.alpha_tilde_T / bundle.eta_T
    grid = np.linspace(0.0, theta_max, sweep)
    rho1 = np.array([rho1_from_state(th, c, march(th, c, bundle, dist, mode), bundle, dist, mode)
                     for th in grid])

    def outer(cc):
        th = _inner_theta(cc, bundle, dist, mode, 1e-15)
        return cc - march(th, cc, bundle, dist, mode).Phi[0]

    drho2 = (outer(c + hc) - outer(c_lo)) / (c + hc - c_lo)
    return SensitivityReport(theta, c, bump, float(np.min(d_theta[interior])),
                             float(np.max(d_c[interior])), bundle.eta_T, rho1,
                             bool(np.all(np.diff(rho1) > 0)), float(drho2), bool(drho2 > 0))
