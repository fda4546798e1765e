import numpy as np
import pytest

from liqgame import CostParams, Empirical, solve
from liqgame.oracle import (best_response_qp, coarse_rates, cost_scale, discrete_objective,
                            nash_deviation_test, project_simplex, sensitivity_check)
from liqgame.paths import player_path

# late and immediate buyers, early-exit and full-horizon sellers
TYPES = [-3.0, -2.0, -1.2, -0.95, -0.9, -0.7, -0.5, -0.3, -0.15, -0.05,
         0.05, 0.15, 0.3, 0.5, 0.65, 0.8, 1.0, 1.5, 2.5, 4.0]


def _analytic_objective(sol, x0):
    rates = coarse_rates(player_path(x0, sol, with_cost=False))
    rates *= x0 / (rates.sum() / rates.size)  # remove fine-grid volume error
    return discrete_objective(x0, rates, sol.t, sol.mu, sol.params)


def test_zero_position():
    t = np.linspace(0, 1, 11)
    r = best_response_qp(0.0, t, np.ones_like(t), CostParams())
    assert not np.any(r.rates) and r.objective == 0.0


def test_constant_rate_without_impact_or_risk():
    p = CostParams(lam=0.0)
    t = np.linspace(0, 1, 101)
    r = best_response_qp(0.7, t, np.zeros_like(t), p)
    np.testing.assert_allclose(r.rates, 0.7, rtol=1e-9)
    assert r.objective == pytest.approx(0.5 * 5 * 0.49, rel=1e-9)


def test_qp_rejects_coarse_grid():
    with pytest.raises(ValueError):
        best_response_qp(1.0, np.linspace(0, 1, 5), np.zeros(5), CostParams(), coarse_n=20)


def test_qp_constraints_exact(sol):
    r = best_response_qp(-0.5, sol.t, sol.mu, sol.params)
    assert np.all(r.rates <= 0)
    assert r.rates.sum() * (1 / 200) == pytest.approx(-0.5, abs=1e-13)
    assert abs(r.positions[-1]) < 1e-13
    assert r.kkt_residual < 1e-10


def test_scenario_buyer(sol):
    qp = best_response_qp(-0.5, sol.t, sol.mu, sol.params)
    an = _analytic_objective(sol, -0.5)
    assert abs(qp.objective - an) <= 1e-3 * abs(an)
    assert qp.objective <= an + 1e-12


@pytest.mark.parametrize("x0", TYPES)
def test_qp_matches_analytic_best_response(sol, x0):
    qp = best_response_qp(x0, sol.t, sol.mu, sol.params)
    an = _analytic_objective(sol, x0)
    assert abs(qp.objective - an) <= 1e-3 * abs(an)


@pytest.mark.parametrize("x0", [-0.7, -0.5, -0.3, -0.15])
def test_entry_emerges_from_active_constraints(sol, x0):
    sigma = player_path(x0, sol, with_cost=False).sigma
    assert sigma > 0
    qp = best_response_qp(x0, sol.t, sol.mu, sol.params)
    assert abs(qp.first_active_time(1e-6) - sigma) <= 2 / 200
    assert qp.last_active_time(1e-6) == pytest.approx(1.0)


@pytest.mark.parametrize("x0", [0.15, 0.3, 0.5])
def test_exit_emerges_from_active_constraints(sol, x0):
    tau = player_path(x0, sol, with_cost=False).tau
    assert tau < 1
    qp = best_response_qp(x0, sol.t, sol.mu, sol.params)
    assert abs(qp.last_active_time(1e-6) - tau) <= 2 / 200
    assert qp.first_active_time(1e-6) == 0.0


def test_full_horizon_types_trade_throughout(sol):
    for x0 in (-2.0, 2.0):
        qp = best_response_qp(x0, sol.t, sol.mu, sol.params)
        assert qp.first_active_time(1e-6) == 0.0 and qp.last_active_time(1e-6) == 1.0


def test_simplex_projection_examples():
    np.testing.assert_allclose(project_simplex(np.array([0.5, 0.5]), 1.0), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex(np.array([2.0, 0.0]), 1.0), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex(np.array([1.0, 1.0, -5.0]), 1.0), [0.5, 0.5, 0])
    assert not np.any(project_simplex(np.array([1.0, 2.0]), 0.0))


def test_zero_perturbation_is_exactly_neutral(sol):
    rep = nash_deviation_test(sol, samples=3, players=[-0.5, 0.5], zero_perturbation=True)
    assert abs(rep.min_gain) < 1e-14


def test_cost_scale():
    assert cost_scale(2.0, CostParams()) == pytest.approx(10.0)


def test_deviation_requires_players_for_continuous(sol):
    with pytest.raises(ValueError):
        nash_deviation_test(sol, samples=1)


def test_mfg_no_profitable_deviation(sol):
    rep = nash_deviation_test(sol, samples=100, seed=3, players=[-1.5, -0.5, -0.2, 0.2, 0.5, 1.5])
    assert rep.passed, list(rep.lines())
    assert "status=PASS" in list(rep.lines())


def test_deviation_report_is_reproducible(sol):
    a = nash_deviation_test(sol, samples=10, seed=11, players=[0.4])
    b = nash_deviation_test(sol, samples=10, seed=11, players=[0.4])
    assert a.min_gain == b.min_gain


def test_nplayer_no_profitable_deviation(mixture):
    p = CostParams.for_players(7)
    s = solve(p, Empirical.from_quantiles(mixture, 7))
    rep = nash_deviation_test(s, samples=100, seed=0, n_players=7)
    assert len(rep.players) == 7 and rep.passed, list(rep.lines())


def test_sensitivity_bounds(sol, bundle, params, mixture):
    rep = sensitivity_check(bundle, params, mixture, sol.theta, sol.c)
    assert rep.min_dtheta >= 5 * (1 - 1e-2)
    assert rep.max_dc <= 1e-6
    assert rep.rho1_increasing and rep.rho1_sweep.size == 16
    assert rep.outer_increasing and rep.passed


def test_sensitivity_flat_beyond_support(bundle, params):
    # a single seller atom well below c: the tail is locally constant in c
    d = Empirical((0.3,))
    rep = sensitivity_check(bundle, params, d, 0.05, 2.0)
    assert abs(rep.max_dc) < 1e-9


def test_sensitivity_requires_positive_theta(bundle, params, mixture):
    with pytest.raises(ValueError):
        sensitivity_check(bundle, params, mixture, 0.0, 0.5)
