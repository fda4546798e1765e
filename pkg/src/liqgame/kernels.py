"""Entry and exit kernels and the timing maps derived from them.

``psi`` is the entry kernel: a buyer of size |x| < psi(0) waits until
psi(sigma) = |x|.  ``phi`` is the exit kernel: a seller with x < phi(T)
is done at the first time phi(tau) = x.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .model import CostParams
from .riccati import RiccatiBundle


class MonotonicityError(RuntimeError):
    """The entry kernel is not strictly decreasing, so timing is ill-defined."""


def cumulative(f, t):
    """int_0^t f on the grid (trapezoid)."""
    return cumulative_trapezoid(f, t, initial=0.0)


def tail_integral(f, t):
    """int_t^T f on the grid (trapezoid)."""
    return cumulative_trapezoid(f[::-1], -t[::-1], initial=0.0)[::-1]


@dataclass
class EntryExitKernels:
    t: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    psi_dot: np.ndarray
    phi_dot: np.ndarray
    certificate: str = "NumericCheck"

    @property
    def psi_at_0(self) -> float:
        return float(self.psi[0])

    @property
    def phi_at_T(self) -> float:
        return float(self.phi[-1])

    def __post_init__(self):
        self._psi_spline = CubicHermiteSpline(self.t, self.psi, self.psi_dot)
        self._phi_spline = CubicHermiteSpline(self.t, self.phi, self.phi_dot)

    def psi_at(self, t):
        return self._psi_spline(t)

    def phi_at(self, t):
        return self._phi_spline(t)


def compute_psi(mu, bundle: RiccatiBundle, params: CostParams | None = None, tau=None):
    """psi(t) = (1/alpha_t) int_t^tau exp(-int_0^s A/eta) kappa mu_s ds, zero after tau."""
    params = params or bundle.params
    t = bundle.t
    mu = np.asarray(mu, dtype=float)
    G = tail_integral(bundle.decay * params.kappa * mu, t)
    if tau is None or tau >= t[-1]:
        return G / bundle.alpha
    G_tau = float(np.interp(tau, t, G))
    psi = (G - G_tau) / bundle.alpha
    return np.where(t <= tau, np.maximum(psi, 0.0), 0.0)


def psi_derivative(psi, mu, bundle: RiccatiBundle, params: CostParams | None = None):
    """(lam*psi - kappa*mu)/(A - delta*kappa), the closed-form slope of psi."""
    params = params or bundle.params
    return (bundle.lam * psi - params.kappa * np.asarray(mu)) * bundle.inv_gap


def compute_phi(mu, bundle: RiccatiBundle, params: CostParams | None = None):
    """phi(t) = int_0^t kappa mu_u h_u du."""
    params = params or bundle.params
    return cumulative(params.kappa * np.asarray(mu, dtype=float) * bundle.h, bundle.t)


def build_kernels(mu, bundle: RiccatiBundle, params: CostParams | None = None,
                  certificate: str = "NumericCheck", require_monotone: bool = True):
    params = params or bundle.params
    mu = np.asarray(mu, dtype=float)
    psi = compute_psi(mu, bundle, params)
    psi_dot = psi_derivative(psi, mu, bundle, params)
    phi = compute_phi(mu, bundle, params)
    phi_dot = params.kappa * mu * bundle.h
    if require_monotone and np.any(mu != 0):
        steps = np.diff(psi)
        if np.any(steps >= 0):
            k = int(np.argmax(steps >= 0))
            raise MonotonicityError(
                f"entry kernel not strictly decreasing near t={bundle.t[k]:.6g}")
    return EntryExitKernels(bundle.t, psi, phi, psi_dot, phi_dot, certificate)


def _root_in_cell(spline, target, a, b):
    fa = float(spline(a)) - target
    fb = float(spline(b)) - target
    if fa == 0:
        return a
    if fb == 0:
        return b
    if fa * fb > 0:
        # interpolant wiggles; fall back to the linear root
        return a + (b - a) * fa / (fa - fb)
    return brentq(lambda s: float(spline(s)) - target, a, b, xtol=1e-15, rtol=1e-15)


def entry_time(x, kernels: EntryExitKernels):
    """Entry time of buyers at (negative) positions ``x``; 0 when |x| >= psi(0)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x >= 0):
        raise ValueError("entry_time expects negative positions")
    t, psi = kernels.t, kernels.psi
    size = -x
    out = np.zeros_like(size)
    rev = psi[::-1]  # increasing
    for i, v in enumerate(size):
        if v >= psi[0]:
            continue
        j = np.searchsorted(rev, v, side="left")  # rev[j-1] < v <= rev[j]
        k = psi.size - 1 - j  # psi[k] >= v > psi[k+1]
        out[i] = _root_in_cell(kernels._psi_spline, v, t[k], t[k + 1])
    return out


def exit_time(x, kernels: EntryExitKernels):
    """Exit time of sellers at (positive) positions ``x``; T when x >= phi(T)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("exit_time expects positive positions")
    t, phi = kernels.t, kernels.phi
    out = np.full_like(x, t[-1])
    for i, v in enumerate(x):
        if v >= phi[-1]:
            continue
        k = np.searchsorted(phi, v, side="left")  # first node with phi >= v
        if phi[k] == v:
            out[i] = t[k]
            continue
        out[i] = _root_in_cell(kernels._phi_spline, v, t[k - 1], t[k])
    return out


def check_mu_assumptions(mu, params: CostParams, t) -> dict:
    """Sign constancy of mu and monotonicity of eta*mu on the grid."""
    mu = np.asarray(mu, dtype=float)
    eta = params.eta_at(t)
    nz = mu[mu != 0]
    sign_ok = bool(nz.size == 0 or np.all(nz > 0) or np.all(nz < 0))
    direction = 1.0 if nz.size == 0 or nz[0] > 0 else -1.0
    prod = direction * eta * mu
    monotone_ok = bool(np.all(np.diff(prod) <= 1e-14 * max(1.0, np.abs(prod).max())))
    return {"sign_ok": sign_ok, "monotone_ok": monotone_ok}
