import math

import numpy as np
import pytest

from liqgame.dist import Empirical, ExpMixture
from liqgame.equilibrium import (NoBracketError, c_upper, exit_mass_residual_rho2,
                                 find_equilibrium, fixed_point_selfcheck, march,
                                 rho1_from_state, solve, solve_backward, solve_backward_picard,
                                 terminal_residual_rho1)
from liqgame.model import CostParams, VariantMode, build_grid
from liqgame.riccati import solve_A

MODES = ["trading", "dropout", "unconstrained"]


def test_zero_terminal_rate_gives_zero(bundle, params, mixture):
    assert not np.any(solve_backward(0.0, 0.4, bundle, params, mixture))
    mu, hist = solve_backward_picard(0.0, 0.4, bundle, params, mixture, return_history=True)
    assert not np.any(mu) and len(hist) == 1


def test_point_mass_seller_closed_form():
    p = CostParams(lam=0.0)
    b = solve_A(p, build_grid(1.0, 1001))
    theta = 0.3
    d = Empirical((5.0,))
    mu = solve_backward(theta, 0.0, b, p, d)
    ref = theta * np.exp(p.kappa * (1 - b.t) / 5.0)
    np.testing.assert_allclose(mu, ref, rtol=1e-10)


def test_gronwall_type_growth(bundle, params, mixture):
    theta = 0.2
    mu = solve_backward(theta, 0.5, bundle, params, mixture)
    K = params.kappa / 5.0 + 1.0 * (1 + 2 * params.kappa / bundle.alpha.min())
    assert np.all(np.abs(mu) <= theta * np.exp(K * (1 - bundle.t)) + 1e-12)


def test_rho1_endpoints(bundle, params, mixture):
    c = 0.5
    st0 = march(0.0, c, bundle, mixture, "trading")
    assert rho1_from_state(0.0, c, st0, bundle, mixture, "trading") == pytest.approx(
        float(mixture.bigQ(c)) - mixture.mean, abs=1e-14)
    hi = mixture.mean * bundle.alpha_tilde_T / bundle.eta_T
    st = march(hi, c, bundle, mixture, "trading")
    assert rho1_from_state(hi, c, st, bundle, mixture, "trading") > 0


def test_rho1_routes_agree(bundle, params, mixture):
    for theta, c in [(0.2, 0.3), (0.35, 0.73), (0.5, 1.5)]:
        st = march(theta, c, bundle, mixture, "trading")
        a = rho1_from_state(theta, c, st, bundle, mixture, "trading")
        b = terminal_residual_rho1(theta, c, st.mu, bundle, params, mixture, "trading")
        assert a == pytest.approx(b, abs=1e-6)


def test_rho1_without_buyers_has_no_integral(bundle, params):
    d = ExpMixture(buyer_mass=0.0)
    theta, c = 0.3, 0.4
    st = march(theta, c, bundle, d, "trading")
    expected = bundle.eta_T / bundle.alpha_tilde_T * theta - d.mean + float(d.bigQ(c))
    assert terminal_residual_rho1(theta, c, st.mu, bundle, params, d) == pytest.approx(expected)


def test_rho2_examples(bundle, params, mixture):
    assert exit_mass_residual_rho2(0.0, 0.7, np.zeros_like(bundle.t), bundle, params) == 0.7
    from liqgame.equilibrium import _inner_theta
    th0 = _inner_theta(0.0, bundle, mixture, VariantMode.TRADING, 1e-15)
    st = march(th0, 0.0, bundle, mixture, "trading")
    assert exit_mass_residual_rho2(th0, 0.0, st.mu, bundle, params) < 0
    c_hi = c_upper(mixture, "trading") * (1 - 1e-9)
    th = _inner_theta(c_hi, bundle, mixture, VariantMode.TRADING, 1e-15)
    st = march(th, c_hi, bundle, mixture, "trading")
    assert exit_mass_residual_rho2(th, c_hi, st.mu, bundle, params) > 0


def test_march_state_matches_quadratures(sol, bundle, params):
    st = sol.state
    from liqgame.kernels import compute_phi, compute_psi, tail_integral
    np.testing.assert_allclose(st.psi, compute_psi(st.mu, bundle, params), atol=1e-6)
    Phi = tail_integral(bundle.h * params.kappa * st.mu, bundle.t)
    np.testing.assert_allclose(st.Phi, Phi, atol=1e-6)
    np.testing.assert_allclose(st.M, tail_integral(st.mu, bundle.t), atol=1e-6)
    assert st.mu[-1] == sol.theta and st.psi[-1] == st.Phi[-1] == st.M[-1] == 0.0


@pytest.mark.parametrize("mode", MODES)
def test_scenario_solution_invariants(solutions, mode, mixture, bundle):
    s = solutions[mode]
    assert np.all(s.mu > 0)
    eta_mu = s.mu * bundle.eta
    assert np.all(np.diff(eta_mu) < 0)
    assert abs(s.mass() - 1.0) < 1e-3
    assert 0 < s.theta < mixture.mean * bundle.alpha_tilde_T / bundle.eta_T
    assert 0 <= s.c < c_upper(mixture, mode)
    assert abs(s.residuals["rho1"]) < 1e-10 and abs(s.residuals["rho2"]) < 1e-10
    assert s.c == pytest.approx(s.kernels.phi_at_T, abs=1e-6)


def test_trading_solution_frozen(sol):
    # regression values at the default grid
    assert sol.theta == pytest.approx(0.350220124, rel=1e-7)
    assert sol.c == pytest.approx(0.730133346, rel=1e-7)
    assert sol.kernels.psi_at_0 == pytest.approx(0.942902649, rel=1e-6)


@pytest.mark.parametrize("mode", MODES)
def test_picard_cross_check(solutions, mode, bundle, params):
    s = solutions[mode]
    pic = solve_backward_picard(s.theta, s.c, bundle, params, s.dist, s.mode)
    assert np.max(np.abs(pic - s.mu)) < 1e-4 * np.max(np.abs(s.mu))
    assert np.max(np.abs(pic - s.mu)) < 1e-4 * s.theta * 10


def test_picard_contracts(sol, bundle, params):
    _, hist = solve_backward_picard(sol.theta, sol.c, bundle, params, sol.dist,
                                    return_history=True)
    ratios = np.array(hist[5:-2]) / np.array(hist[4:-3])
    assert np.all(ratios < 1)


def test_outer_map_monotone(sol):
    assert sol.residuals["outer_monotone"]
    assert len(sol.roots) == 1


def test_no_buyers_trading_equals_dropout(bundle, params):
    d = ExpMixture(buyer_mass=0.0)
    a = solve(params, d, "trading", bundle=bundle)
    b = solve(params, d, "dropout", bundle=bundle)
    assert np.max(np.abs(a.mu - b.mu)) < 1e-8
    assert a.c == pytest.approx(a.kernels.phi_at_T, abs=1e-6)


def test_single_atom_all_modes_coincide(bundle, params):
    d = Empirical((1.0,))
    sols = [solve(params, d, m, bundle=bundle) for m in MODES]
    for s in sols[1:]:
        assert np.max(np.abs(s.mu - sols[0].mu)) < 1e-6


def test_empty_market_trivial(bundle, params):
    s = solve(params, Empirical((-1.0, 1.0)), bundle=bundle)
    assert s.trivial and not np.any(s.mu)
    assert fixed_point_selfcheck(s) == 0.0


def test_buyer_dominated_reflection(bundle, params, sol):
    d = ExpMixture(0.2, 1.0, 0.8, 2.0 / 3.0)
    s = solve(params, d, bundle=bundle)
    assert s.sign == -1.0
    np.testing.assert_allclose(s.mu, -sol.mu, atol=1e-14)
    assert s.mass() == pytest.approx(d.mean, abs=1e-3)


def test_find_equilibrium_rejects_nonpositive_mean(bundle, params):
    with pytest.raises(ValueError):
        find_equilibrium(bundle, params, Empirical((-1.0, 0.5)))


def test_no_bracket_reported_with_scan(bundle, params, monkeypatch):
    import liqgame.equilibrium as eq
    monkeypatch.setattr(eq, "_outer_value", lambda c, *a: (1.0 + c, 0.1, None))
    with pytest.raises(NoBracketError) as err:
        eq.find_equilibrium(bundle, params, ExpMixture())
    assert len(err.value.scan) == 33


def test_multiple_roots_warn_and_take_smallest(bundle, params, monkeypatch, caplog):
    import liqgame.equilibrium as eq
    real = eq._outer_value

    def fake(c, *a):
        g, th, st = real(c, *a)
        return math.sin(8 * c), th, st

    monkeypatch.setattr(eq, "_outer_value", fake)
    s = eq.find_equilibrium(bundle, params, ExpMixture())
    assert len(s.roots) > 1 and s.c == min(s.roots)
    assert any("roots" in n for n in s.notes)


def test_fixed_point_scenario(sol):
    err = fixed_point_selfcheck(sol, strata=512)
    assert err < 1e-3 * np.max(np.abs(sol.mu))


def test_nplayer_fixed_point_exact(mixture):
    p = CostParams.for_players(7)
    s = solve(p, Empirical.from_quantiles(mixture, 7))
    assert fixed_point_selfcheck(s) < 1e-6 * np.max(np.abs(s.mu))
    assert abs(s.residuals["mass_error"]) < 1e-3


def test_residuals_recomputable(sol, bundle, params):
    r1 = terminal_residual_rho1(sol.theta, sol.c, sol.mu, bundle, params, sol.dist)
    r2 = exit_mass_residual_rho2(sol.theta, sol.c, sol.mu, bundle, params)
    assert r1 == pytest.approx(sol.residuals["rho1_quadrature"])
    assert r2 == pytest.approx(sol.residuals["rho2_quadrature"])


def test_time_varying_risk_without_certificate():
    from liqgame.config import LinearCoefficient
    p = CostParams(lam=LinearCoefficient(50.0, -25.0))
    s = solve(p, ExpMixture())
    assert s.kernels.certificate == "NumericCheck"
    assert np.all(np.diff(s.kernels.psi) < 0)
    assert abs(s.mass() - 1) < 1e-3
