import numpy as np
import pytest

from liqgame import CostParams, Empirical, build_grid, solve_A
from liqgame.oracle import coarse_rates
from liqgame.paths import (ResponseTables, aggregate_F, buyer_path, evaluate_cost, player_path,
                           positions_from_rates, seller_path)

TYPES = [-2.5, -1.5, -0.9, -0.5, -0.2, -0.05, 0.05, 0.2, 0.5, 0.73, 1.0, 2.0, 4.0]


@pytest.mark.parametrize("x0", TYPES)
def test_path_invariants(sol, x0):
    p = player_path(x0, sol)
    assert p.X[0] == pytest.approx(x0, abs=1e-12)
    assert p.X[-1] == 0.0
    assert np.all(np.sign(x0) * p.xi >= -1e-12)
    assert np.all(np.sign(x0) * p.X >= -1e-9)
    assert np.all(p.xi[p.t < p.sigma - 1e-12] == 0)
    assert np.all(p.xi[p.t > p.tau + 1e-12] == 0)
    # positions integrate the rates
    X = positions_from_rates(x0, p.xi, p.t)
    assert np.max(np.abs(X - p.X)) < 1e-5 * abs(x0) + 1e-7


@pytest.mark.parametrize("x0", [-1.5, -0.5, 0.2, 0.5, 2.0])
def test_forward_backward_system(sol, x0):
    p = player_path(x0, sol)
    b = sol.bundle
    np.testing.assert_allclose(p.Y, b.eta * p.xi + b.dk * p.X, atol=1e-14)
    active = (p.t > p.sigma + 0.02) & (p.t < p.tau - 0.02)
    dY = np.gradient(p.Y, p.t)
    rhs = -(b.lam * p.X + sol.params.kappa * sol.mu)
    assert np.max(np.abs(dY - rhs)[active]) < 1e-3 * max(1.0, abs(x0))


def test_timing_structure(sol):
    k = sol.kernels
    xs = np.linspace(-3, -0.01, 60)
    sig = np.array([player_path(x, sol, with_cost=False).sigma for x in xs])
    assert np.all(np.diff(sig) >= 0)
    assert np.all(sig[xs <= -k.psi_at_0] == 0)
    assert np.all(sig[xs > -k.psi_at_0] > 0)
    ys = np.linspace(0.01, 3, 60)
    tau = np.array([player_path(y, sol, with_cost=False).tau for y in ys])
    assert np.all(np.diff(tau) >= 0)
    assert np.all(tau[ys >= k.phi_at_T] == sol.params.T)
    assert np.all(tau[ys < k.phi_at_T] < sol.params.T)


def test_continuity_at_full_horizon_threshold(sol):
    b = sol.kernels.phi_at_T
    lo = player_path(b * (1 - 1e-7), sol, with_cost=False)
    hi = player_path(b * (1 + 1e-7), sol, with_cost=False)
    assert np.max(np.abs(lo.xi - hi.xi)) < 1e-5


def test_linear_growth_beyond_thresholds(sol):
    a, b = player_path(2.0, sol, with_cost=False), player_path(3.0, sol, with_cost=False)
    c = player_path(4.0, sol, with_cost=False)
    np.testing.assert_allclose(c.xi - b.xi, b.xi - a.xi, atol=1e-10)
    a, b = player_path(-2.0, sol, with_cost=False), player_path(-3.0, sol, with_cost=False)
    c = player_path(-4.0, sol, with_cost=False)
    np.testing.assert_allclose(c.xi - b.xi, b.xi - a.xi, atol=1e-10)


def test_zero_position_is_idle(sol):
    p = player_path(0.0, sol)
    assert not np.any(p.xi) and p.cost == 0.0


def test_signed_helpers(sol):
    assert buyer_path(-0.5, sol).xi.min() < 0
    assert seller_path(0.5, sol).xi.max() > 0
    with pytest.raises(ValueError):
        buyer_path(0.5, sol)
    with pytest.raises(ValueError):
        seller_path(-0.5, sol)


def test_constant_rate_without_impact_or_risk():
    p = CostParams(lam=0.0)
    b = solve_A(p, build_grid(1.0, 801))
    tab = ResponseTables(np.zeros_like(b.t), b)
    path = tab.path(1.3)
    np.testing.assert_allclose(path.xi, 1.3, rtol=1e-10)
    assert evaluate_cost(path, np.zeros_like(b.t), p) == pytest.approx(0.5 * 5 * 1.3**2, rel=1e-10)


@pytest.mark.parametrize("x0", [-1.5, -0.2, 0.2, 1.5])
def test_equilibrium_cost_beats_constant_rate(sol, x0):
    p = player_path(x0, sol)
    t = sol.t
    s0 = p.sigma
    twap = np.where(t >= s0, x0 / (sol.params.T - s0), 0.0)
    X = positions_from_rates(x0, twap, t)
    X[-1] = 0
    from liqgame.paths import PlayerPath
    alt = PlayerPath(x0, s0, 1.0, t, X, X * np.nan, twap)
    assert p.cost <= evaluate_cost(alt, sol.mu, sol.params) + 1e-9


def test_aggregation_is_linear_in_the_distribution(sol):
    tab = ResponseTables(sol.mu_pos, sol.bundle, sol.mode, sol.kernels)
    A = Empirical((-1.0, 0.3, 0.6, 2.0))
    B = Empirical((-0.4, 0.1, 1.1, 1.7))
    both = Empirical(A.x.tolist() + B.x.tolist())
    np.testing.assert_allclose(tab.aggregate(both), 0.5 * (tab.aggregate(A) + tab.aggregate(B)),
                               atol=1e-14)


def test_empirical_aggregate_is_sum_of_paths(sol):
    d = Empirical((-1.2, -0.3, 0.4, 0.9, 2.2))
    tab = ResponseTables(sol.mu_pos, sol.bundle, sol.mode, sol.kernels)
    total = sum(tab.path(x).xi for x in d.x) / d.n
    np.testing.assert_allclose(tab.aggregate(d), total, atol=1e-12)


def test_aggregate_matches_equilibrium(sol):
    F = aggregate_F(sol, strata=512)
    assert np.max(np.abs(F - sol.mu)) < 1e-3 * np.max(sol.mu)


def test_cost_rejects_grid_mismatch(sol):
    p = player_path(0.5, sol)
    with pytest.raises(ValueError):
        evaluate_cost(p, sol.mu[::2], sol.params)


def test_coarse_rates_preserve_volume(sol):
    p = player_path(0.8, sol)
    r = coarse_rates(p, 200)
    # the fine-grid quadrature of an analytic rate is second order
    assert r.sum() / 200 == pytest.approx(0.8, rel=1e-5)
