import numpy as np
import pytest
from scipy.integrate import quad

from liqgame.kernels import (MonotonicityError, build_kernels, check_mu_assumptions, compute_phi,
                             compute_psi, entry_time, exit_time, psi_derivative)
from liqgame.model import CostParams, build_grid
from liqgame.riccati import solve_A


def test_zero_rate_gives_zero_kernels(bundle, params):
    mu = np.zeros_like(bundle.t)
    assert not np.any(compute_psi(mu, bundle, params))
    assert not np.any(compute_phi(mu, bundle, params))


def test_boundary_values(sol):
    k = sol.kernels
    assert k.psi[-1] == 0.0
    assert k.phi[0] == 0.0
    assert np.all(np.diff(k.psi) < 0)
    assert np.all(np.diff(k.phi) > 0)


def test_psi_slope_identity(sol, bundle, params):
    t = bundle.t
    fd = np.gradient(sol.kernels.psi, t, edge_order=2)
    exact = psi_derivative(sol.kernels.psi, sol.mu, bundle, params)
    inner = slice(2, -2)
    rel = np.abs(fd[inner] - exact[inner]) / np.max(np.abs(exact))
    assert rel.max() < 1e-4


def test_psi_with_exit_time_vanishes_after(sol, bundle, params):
    tau = 0.6
    psi = compute_psi(sol.mu, bundle, params, tau=tau)
    assert np.all(psi[bundle.t > tau] == 0)
    assert np.all(psi >= 0)


def test_phi_for_unit_rate_without_risk():
    p = CostParams(lam=0.0)
    b = solve_A(p, build_grid(1.0, 801))
    phi = compute_phi(np.ones_like(b.t), b, p)
    # h = t/eta, so phi = kappa t^2 / (2 eta)
    ref = np.array([quad(lambda s: p.kappa * s / 5.0, 0, tt)[0] for tt in b.t])
    np.testing.assert_allclose(phi, ref, rtol=1e-6, atol=1e-12)


def test_phi_bound(sol, bundle, params):
    k = sol.kernels
    from liqgame.kernels import cumulative
    bound = params.kappa * np.max(bundle.h) * cumulative(sol.mu, bundle.t)
    assert np.all(k.phi <= bound + 1e-12)


def test_entry_time_conventions(sol):
    k = sol.kernels
    assert entry_time(-1.2 * k.psi_at_0, k)[0] == 0.0
    assert entry_time(-k.psi_at_0, k)[0] == 0.0
    assert entry_time(-1e-9, k)[0] > 0.999
    with pytest.raises(ValueError):
        entry_time(0.5, k)


def test_exit_time_conventions(sol):
    k = sol.kernels
    assert exit_time(1.5 * k.phi_at_T, k)[0] == sol.t[-1]
    assert exit_time(k.phi_at_T, k)[0] == sol.t[-1]
    assert exit_time(1e-9, k)[0] < 1e-3
    with pytest.raises(ValueError):
        exit_time(-0.5, k)


def test_timing_inverts_kernels(sol):
    k = sol.kernels
    x = -np.linspace(0.01, 0.99, 40) * k.psi_at_0
    sig = entry_time(x, k)
    assert np.max(np.abs(k.psi_at(sig) + x)) < 1e-8 * (1 + np.abs(x)).max()
    y = np.linspace(0.01, 0.99, 40) * k.phi_at_T
    tau = exit_time(y, k)
    assert np.max(np.abs(k.phi_at(tau) - y)) < 1e-8
    s = np.linspace(0.05, 0.95, 20)
    np.testing.assert_allclose(entry_time(-k.psi_at(s), k), s, atol=1e-8)
    np.testing.assert_allclose(exit_time(k.phi_at(s), k), s, atol=1e-8)


def test_timing_monotone(sol):
    k = sol.kernels
    sizes = np.linspace(0.01, 1.5, 80)
    sig = entry_time(-sizes, k)
    assert np.all(np.diff(sig) <= 0)
    tau = exit_time(sizes, k)
    assert np.all(np.diff(tau) >= 0)


def test_flat_exit_kernel_takes_leftmost_root(bundle, params):
    mu = np.where(bundle.t < 0.5, 1.0, 0.0)
    k = build_kernels(mu, bundle, params, require_monotone=False)
    level = k.phi[-1]
    assert exit_time(level * (1 - 1e-12), k)[0] <= 0.5 + 1e-3


def test_non_monotone_entry_kernel_rejected(bundle, params):
    mu = np.where(bundle.t < 0.5, 0.0, 1.0) + 1e-3
    mu[bundle.t < 0.5] = 0.0
    with pytest.raises(MonotonicityError):
        build_kernels(mu, bundle, params)


@pytest.mark.parametrize("mu_fn,sign,mono", [
    (lambda t: np.ones_like(t), True, True),
    (lambda t: 1.0 - t, True, True),
    (lambda t: np.sin(6 * t), False, False),
])
def test_rate_assumptions(mu_fn, sign, mono, params):
    t = np.linspace(0, 1, 201)
    d = check_mu_assumptions(mu_fn(t), params, t)
    assert d["sign_ok"] is sign and d["monotone_ok"] is mono
