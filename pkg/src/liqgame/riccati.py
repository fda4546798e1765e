"""Singular Riccati equation for the price-impact adjoint and derived tables.

The Riccati solution ``A`` blows up like ``eta_T / (T - t)``.  Everything is
therefore expressed through the reciprocal ``w = 1/A`` (smooth, ``w(T) = 0``)
and the regular remainder ``R`` in

    exp(-int_0^t A/eta) = (T - t)/T * exp(-R(t)),

so no table ever stores a value that is infinite or a 0*inf product.
Tables live on the grid refined with interval midpoints; coarse-grid views
take every second entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import CubicSpline

from .model import CostParams, TimeGrid


def _log_expm1_ratio(x):
    """log(expm1(x)/x), equal to 0 at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    small = (x > 0) & (x <= 1.0)
    big = x > 1.0
    out[small] = np.log(np.expm1(x[small]) / x[small])
    out[big] = x[big] + np.log(-np.expm1(-x[big])) - np.log(x[big])
    return out


def riccati_roots(params: CostParams):
    """Roots r_minus <= 0 <= r_plus of A^2 - delta*kappa*A - eta*lam (constant case)."""
    dk = params.delta * params.kappa
    disc = math.sqrt(dk * dk + 4.0 * float(params.eta) * float(params.lam))
    r_plus = 0.5 * (dk + disc)
    return r_plus, dk - r_plus, disc


def closed_form_A(params: CostParams, t):
    """Closed-form A and its time derivative for constant eta and lambda."""
    if not params.constant:
        raise ValueError("closed form needs constant coefficients")
    eta = float(params.eta)
    t = np.asarray(t, dtype=float)
    s = params.T - t
    rp, rm, d = riccati_roots(params)
    with np.errstate(divide="ignore", invalid="ignore"):
        if d == 0.0:
            A = eta / s
            Adot = eta / s**2
        else:
            e = np.exp(-d * s / eta)
            one_minus = -np.expm1(-d * s / eta)
            A = rm + d / one_minus
            Adot = (d * d / eta) * e / one_minus**2
    return A, Adot


def _reciprocal_closed(params: CostParams, s):
    eta = float(params.eta)
    rp, rm, d = riccati_roots(params)
    if d == 0.0:
        return s / eta
    e = np.exp(-d * s / eta)
    return -np.expm1(-d * s / eta) / (rp - e * rm)


def _remainder_closed(params: CostParams, t):
    eta = float(params.eta)
    rp, rm, d = riccati_roots(params)
    s = params.T - t
    return rm * t / eta - _log_expm1_ratio(d * s / eta) + _log_expm1_ratio(np.array(d * params.T / eta))


def _reciprocal_integrated(params: CostParams, t):
    """Integrate w' = -1/eta + delta*kappa*w/eta + lam*w^2 backward from w(T) = 0."""
    t = np.asarray(t, dtype=float)
    dk = params.delta * params.kappa

    def rhs(tt, y):
        eta = float(params.eta_at(tt))
        lam = float(params.lam_at(tt))
        w = y[0]
        return [-1.0 / eta + dk * w / eta + lam * w * w]

    sol = solve_ivp(rhs, (params.T, 0.0), [0.0], method="DOP853", rtol=1e-13,
                    atol=1e-16, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"Riccati integration failed: {sol.message}")
    w = np.atleast_1d(sol.sol(t)[0])
    w[t >= params.T] = 0.0
    return w.reshape(t.shape)


def evaluate_A(params: CostParams, t, method: str = "auto"):
    """A at arbitrary times before T, without going through a grid."""
    if method == "auto":
        method = "closed" if params.constant else "integrate"
    t = np.asarray(t, dtype=float)
    if method == "closed":
        w = _reciprocal_closed(params, params.T - t)
    else:
        w = _reciprocal_integrated(params, t)
    with np.errstate(divide="ignore"):
        return 1.0 / w


@dataclass
class RiccatiBundle:
    """Tables for ``A``, ``alpha``, ``alpha_tilde`` and ``h`` on a grid.

    Arrays with a ``_f`` suffix live on the midpoint-refined grid; the
    plain properties return the coarse-grid view.
    """

    params: CostParams
    grid: TimeGrid
    t_f: np.ndarray
    w_f: np.ndarray
    remainder_f: np.ndarray
    inv_eta_int_f: np.ndarray
    eta_f: np.ndarray
    eta_dot_f: np.ndarray
    lam_f: np.ndarray
    alpha_f: np.ndarray
    alpha_tilde_f: np.ndarray
    h_f: np.ndarray
    decay_f: np.ndarray
    asymptote: dict
    method: str
    _splines: dict = field(default_factory=dict, repr=False)

    @property
    def delta(self) -> float:
        return self.params.delta

    @property
    def dk(self) -> float:
        return self.params.delta * self.params.kappa

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def coarse(self, arr):
        return arr[0::2]

    @property
    def A(self):
        with np.errstate(divide="ignore"):
            return 1.0 / self.coarse(self.w_f)

    @property
    def alpha(self):
        return self.coarse(self.alpha_f)

    @property
    def alpha_tilde(self):
        return self.coarse(self.alpha_tilde_f)

    @property
    def h(self):
        return self.coarse(self.h_f)

    @property
    def eta(self):
        return self.coarse(self.eta_f)

    @property
    def lam(self):
        return self.coarse(self.lam_f)

    @property
    def inv_gap_f(self):
        """1/(A - delta*kappa), vanishing at T."""
        return self.w_f / (1.0 - self.dk * self.w_f)

    @property
    def inv_gap(self):
        return self.coarse(self.inv_gap_f)

    @property
    def decay(self):
        """exp(-int_0^t A/eta), equal to 0 at T."""
        return self.coarse(self.decay_f)

    @property
    def tilt(self):
        """exp(delta*kappa*int_0^t 1/eta)."""
        return np.exp(self.dk * self.coarse(self.inv_eta_int_f))

    @property
    def decay_tilde(self):
        """exp(-int_0^t (A - delta*kappa)/eta)."""
        return self.decay * self.tilt

    @property
    def alpha_tilde_T(self) -> float:
        return float(self.alpha_tilde_f[-1])

    @property
    def alpha_T(self) -> float:
        return float(self.alpha_f[-1])

    @property
    def eta_T(self) -> float:
        return float(self.eta_f[-1])

    def at(self, name: str, t):
        """Cubic interpolation of a refined table at arbitrary times."""
        if name not in self._splines:
            self._splines[name] = CubicSpline(self.t_f, getattr(self, name))
        return self._splines[name](t)

    def to_rows(self):
        A = self.A
        return np.column_stack([self.t, A, self.alpha, self.alpha_tilde, self.h])


def solve_A(params: CostParams, grid: TimeGrid, method: str = "auto",
            asymptote_window: float = 1e-3) -> RiccatiBundle:
    """Solve the Riccati equation and tabulate alpha, alpha_tilde and h."""
    if abs(grid.T - params.T) > 1e-12 * params.T:
        raise ValueError("grid horizon does not match params.T")
    if method == "auto":
        method = "closed" if params.constant else "integrate"
    T = params.T
    t = grid.refined()
    s = T - t
    s[-1] = 0.0
    dk = params.delta * params.kappa
    eta = params.eta_at(t)
    eta_dot = params.eta_dot_at(t)
    lam = params.lam_at(t)
    if np.any(eta <= 0) or np.any(lam < 0):
        raise ValueError("coefficients violate positivity")

    if params.constant:
        inv_eta_int = t / float(params.eta)
    else:
        inv_eta_int = cumulative_simpson(1.0 / eta, x=t, initial=0.0)

    slope_T = (eta_dot[-1] + dk) / (2.0 * eta[-1])
    if method == "closed":
        w = _reciprocal_closed(params, s)
        R = _remainder_closed(params, t)
    elif method == "integrate":
        w = _reciprocal_integrated(params, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (s - eta * w) / (eta * w * s)
        window = asymptote_window * T
        near = s < window
        stitch = np.flatnonzero(~near)[-1]
        # linear blend towards the analytic limit inside the window
        frac = s[near] / s[stitch]
        r[near] = slope_T + frac * (r[stitch] - slope_T)
        R = cumulative_simpson(r, x=t, initial=0.0)
    else:
        raise ValueError(f"unknown method {method!r}")

    ratio = np.empty_like(w)
    ratio[:-1] = s[:-1] / w[:-1]
    ratio[-1] = eta[-1]
    gap_factor = 1.0 - dk * w
    if np.any(gap_factor <= 0):
        raise RuntimeError("A - delta*kappa not positive; Riccati solution invalid")
    alpha = gap_factor * ratio * np.exp(-R) / T
    tilt = np.exp(dk * inv_eta_int)
    alpha_tilde = alpha * tilt
    decay = (s / T) * np.exp(-R)

    # h = exp(-L) * int_0^t exp(2L - dk*I)/eta, with exp(2L) = (T/s)^2 exp(2R):
    # integrate g/s^2 exactly for g linear in s on each refined interval.
    g = np.exp(2.0 * R - dk * inv_eta_int) / eta
    s0, s1 = s[:-1], s[1:]
    g0, g1 = g[:-1], g[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        b = (g0 - g1) / (s0 - s1)
        a = g0 - b * s0
        piece = a * (1.0 / s1 - 1.0 / s0) + b * np.log(s0 / s1)
    piece[-1] = 0.0  # unused: h_T comes from the limit below
    H = np.concatenate([[0.0], np.cumsum(piece)])
    h = T * s * np.exp(-R) * H
    h[-1] = 1.0 / alpha_tilde[-1]

    asym = {"eta_T": float(eta[-1]), "slope": float(slope_T), "window": asymptote_window * T}
    return RiccatiBundle(params, grid, t, w, R, inv_eta_int, eta, eta_dot, lam,
                         alpha, alpha_tilde, h, decay, asym, method)


def compute_alpha(bundle: RiccatiBundle) -> np.ndarray:
    return bundle.alpha


def compute_h(bundle: RiccatiBundle, params: CostParams | None = None) -> np.ndarray:
    return bundle.h


def compute_alpha_tilde_T(bundle: RiccatiBundle) -> float:
    val = bundle.alpha_tilde_T
    if not (np.isfinite(val) and val > 0):
        raise RuntimeError("terminal limit of alpha_tilde is not finite and positive")
    return val


def riccati_residual(params: CostParams, t, A, Adot):
    """Relative residual of -A' = -A^2/eta + delta*kappa*A/eta + lam."""
    eta = params.eta_at(t)
    lam = params.lam_at(t)
    dk = params.delta * params.kappa
    res = -Adot + A**2 / eta - dk * A / eta - lam
    return res / (1.0 + A**2 / eta)


def lower_bound_gap(bundle: RiccatiBundle) -> np.ndarray:
    """(A - delta*kappa) - exp(int dk/eta) * A_circ on the coarse grid, excluding T.

    ``A_circ = 1 / int_t^T 1/eta_tilde`` with ``eta_tilde = eta * exp(-int dk/eta)``.
    """
    t_f = bundle.t_f
    weight = np.exp(bundle.dk * bundle.inv_eta_int_f) / bundle.eta_f
    tail = cumulative_simpson(weight[::-1], x=-t_f[::-1], initial=0.0)[::-1]
    tail = bundle.coarse(tail)[:-1]
    A = bundle.A[:-1]
    tilt = bundle.tilt[:-1]
    return (A - bundle.dk) - tilt / tail
