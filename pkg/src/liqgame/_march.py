"""Compiled backward march for the parameterised aggregate-rate equation.

State per node: (mu, psi, Phi, M, K) where Phi = int_t^T h kappa mu,
M = int_t^T mu and K = int_t^T p(-psi) (lam psi - kappa mu) / alpha_tilde.
Tables are given on the midpoint-refined grid, so every RK4 stage of a
regular step reads exact table values.
"""
import math

import numpy as np
from numba import njit

TRADING, DROPOUT, UNCONSTRAINED = 0, 1, 2
ANALYTIC, ATOMIC = 0, 1


@njit(cache=True)
def _analytic_terms(mode, psi, arg, ms, rs, mb, rb):
    if mode == UNCONSTRAINED:
        return 1.0, 0.0, 0.0
    qv = ms
    if ms > 0.0 and arg > 0.0:
        qv = ms * math.exp(-rs * arg)
    if mode == DROPOUT:
        return qv + mb, 0.0, 0.0
    if mb == 0.0:
        return qv, 0.0, 0.0
    x = -psi
    if x >= 0.0:
        return qv + mb, mb, 0.0
    e = math.exp(rb * x)
    pv = mb * e
    ell = mb * (x * e - math.expm1(rb * x) / rb)
    return qv + pv, pv, ell


@njit(cache=True)
def _atomic_terms(mode, jb, js, nb, ns, bprefix, inv_n):
    if mode == UNCONSTRAINED:
        return 1.0, 0.0, 0.0
    qv = (ns - js) * inv_n
    if mode == DROPOUT:
        return qv + nb * inv_n, 0.0, 0.0
    pv = (nb - jb) * inv_n
    return qv + pv, pv, bprefix[jb] * inv_n


@njit(cache=True)
def _rhs(y, eta, etad, lam, ig, h, at, kappa, delta, mode, mass, pv, ell, out):
    mu = y[0]
    psi = y[1]
    out[0] = -(kappa / eta) * (mass - delta) * mu - (etad / eta) * mu - (lam / eta) * (ell + y[3])
    if mode == TRADING:
        drift = lam * psi - kappa * mu
        out[1] = drift * ig
        out[4] = -pv * drift / at
    else:
        out[1] = 0.0
        out[4] = 0.0
    out[2] = -h * kappa * mu
    out[3] = -mu


@njit(cache=True)
def _coef(tab, t_f, lo, t):
    """Linear interpolation of the six coefficient tables at t within [t_f[lo], t_f[lo+2]]."""
    j = lo
    if t > t_f[lo + 1]:
        j = lo + 1
    w = (t - t_f[j]) / (t_f[j + 1] - t_f[j])
    res = np.empty(6)
    for i in range(6):
        res[i] = tab[i, j] + w * (tab[i, j + 1] - tab[i, j])
    return res


@njit(cache=True)
def _stage_terms(kind, mode, y, c, dpar, jb, js, nb, ns, bprefix, inv_n):
    if kind == ANALYTIC:
        return _analytic_terms(mode, y[1], c - y[2], dpar[0], dpar[1], dpar[2], dpar[3])
    return _atomic_terms(mode, jb, js, nb, ns, bprefix, inv_n)


@njit(cache=True)
def _rk4(y0, hstep, c0, c1, c2, kappa, delta, mode, kind, c, dpar, jb, js, nb, ns,
         bprefix, inv_n, k1, k2, k3, k4):
    tmp = np.empty(5)
    m, pv, ell = _stage_terms(kind, mode, y0, c, dpar, jb, js, nb, ns, bprefix, inv_n)
    _rhs(y0, c0[0], c0[1], c0[2], c0[3], c0[4], c0[5], kappa, delta, mode, m, pv, ell, k1)
    for i in range(5):
        tmp[i] = y0[i] + 0.5 * hstep * k1[i]
    m, pv, ell = _stage_terms(kind, mode, tmp, c, dpar, jb, js, nb, ns, bprefix, inv_n)
    _rhs(tmp, c1[0], c1[1], c1[2], c1[3], c1[4], c1[5], kappa, delta, mode, m, pv, ell, k2)
    for i in range(5):
        tmp[i] = y0[i] + 0.5 * hstep * k2[i]
    m, pv, ell = _stage_terms(kind, mode, tmp, c, dpar, jb, js, nb, ns, bprefix, inv_n)
    _rhs(tmp, c1[0], c1[1], c1[2], c1[3], c1[4], c1[5], kappa, delta, mode, m, pv, ell, k3)
    for i in range(5):
        tmp[i] = y0[i] + hstep * k3[i]
    m, pv, ell = _stage_terms(kind, mode, tmp, c, dpar, jb, js, nb, ns, bprefix, inv_n)
    _rhs(tmp, c2[0], c2[1], c2[2], c2[3], c2[4], c2[5], kappa, delta, mode, m, pv, ell, k4)
    y1 = np.empty(5)
    for i in range(5):
        y1[i] = y0[i] + hstep * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
    return y1


@njit(cache=True)
def _hermite(u, a, b, da, db):
    h00 = (1.0 + 2.0 * u) * (1.0 - u) ** 2
    h10 = u * (1.0 - u) ** 2
    h01 = u * u * (3.0 - 2.0 * u)
    h11 = u * u * (u - 1.0)
    return h00 * a + h10 * da + h01 * b + h11 * db


@njit(cache=True)
def _crossing(a, b, da, db, target):
    """Fraction u in (0, 1] where the cubic Hermite interpolant first reaches target."""
    fa = a - target
    lo, hi = 0.0, 1.0
    # coarse scan for the first sign change, then bisection
    n_scan = 16
    prev = fa
    for i in range(1, n_scan + 1):
        u = i / n_scan
        val = _hermite(u, a, b, da, db) - target
        if (val >= 0.0) != (prev >= 0.0):
            lo = (i - 1) / n_scan
            hi = u
            break
        prev = val
    flo = _hermite(lo, a, b, da, db) - target
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fm = _hermite(mid, a, b, da, db) - target
        if (fm >= 0.0) == (flo >= 0.0):
            lo = mid
            flo = fm
        else:
            hi = mid
    return hi


@njit(cache=True)
def march_kernel(theta, c, mode, kind, dpar, sellers, buyers, bprefix, inv_n,
                 kappa, delta, t_f, tab):
    """Integrate the state backward from (theta, 0, 0, 0, 0) at T.

    ``tab`` rows: eta, eta_dot, lam, 1/(A - delta kappa), h, alpha_tilde.
    """
    nf = t_f.size
    n = (nf + 1) // 2
    out = np.zeros((n, 5))
    y = np.zeros(5)
    y[0] = theta
    out[n - 1, :] = y
    nb = buyers.size
    ns = sellers.size
    jb = 0
    js = 0
    if kind == ATOMIC:
        while js < ns and sellers[js] < c:
            js += 1
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    f0 = np.empty(5)
    f1 = np.empty(5)
    events = kind == ATOMIC and mode != UNCONSTRAINED
    for k in range(n - 1, 0, -1):
        lo = 2 * k - 2
        t1 = t_f[lo]
        tc = t_f[2 * k]
        c2 = tab[:, lo].copy()
        guard = 0
        while True:
            if tc == t_f[2 * k]:
                c0 = tab[:, 2 * k].copy()
                c1 = tab[:, 2 * k - 1].copy()
            else:
                c0 = _coef(tab, t_f, lo, tc)
                c1 = _coef(tab, t_f, lo, 0.5 * (tc + t1))
            hstep = t1 - tc
            y1 = _rk4(y, hstep, c0, c1, c2, kappa, delta, mode, kind, c, dpar, jb, js,
                      nb, ns, bprefix, inv_n, k1, k2, k3, k4)
            if not events or guard > 4 * (nb + ns) + 8:
                y = y1
                break
            hit_b = mode == TRADING and jb < nb and y1[1] > buyers[jb]
            hit_s = js > 0 and c - y1[2] <= sellers[js - 1]
            if not (hit_b or hit_s):
                y = y1
                break
            guard += 1
            m, pv, ell = _atomic_terms(mode, jb, js, nb, ns, bprefix, inv_n)
            _rhs(y, c0[0], c0[1], c0[2], c0[3], c0[4], c0[5], kappa, delta, mode, m, pv, ell, f0)
            _rhs(y1, c2[0], c2[1], c2[2], c2[3], c2[4], c2[5], kappa, delta, mode, m, pv, ell, f1)
            ub = 2.0
            us = 2.0
            if hit_b:
                ub = _crossing(y[1], y1[1], f0[1] * hstep, f1[1] * hstep, buyers[jb])
            if hit_s:
                us = _crossing(y[2], y1[2], f0[2] * hstep, f1[2] * hstep, c - sellers[js - 1])
            u = min(ub, us)
            t_ev = tc + u * hstep
            if u < 1.0:
                ce = _coef(tab, t_f, lo, t_ev)
                cm = _coef(tab, t_f, lo, 0.5 * (tc + t_ev))
                y = _rk4(y, u * hstep, c0, cm, ce, kappa, delta, mode, kind, c, dpar, jb, js,
                         nb, ns, bprefix, inv_n, k1, k2, k3, k4)
            else:
                y = y1
            if ub <= us:
                level = buyers[jb]
                while jb < nb and buyers[jb] <= level:
                    jb += 1
            if us <= ub:
                level = sellers[js - 1]
                while js > 0 and sellers[js - 1] >= level:
                    js -= 1
            tc = t_ev
            if u >= 1.0:
                break
        out[k - 1, :] = y
    return out
