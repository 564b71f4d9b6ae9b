"""LDPC degree-distribution design by Gaussian-approximation density evolution.

Messages are modelled as consistent Gaussians, so a density is fully
described by its mean. ``phi(m) = 1 - E[tanh(u / 2)]`` for
``u ~ N(m, 2m)`` drives the check-node update. For fixed check degrees the
convergence condition is linear in the variable-edge distribution, which
makes rate maximization a linear program.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

__all__ = ["phi", "phi_inv", "ga_converges", "ga_threshold", "optimize_lambda",
           "design", "edge_to_node", "awgn_capacity", "biawgn_capacity"]

_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(160)


@lru_cache(maxsize=1)
def _table():
    m = np.logspace(-6, np.log10(400.0), 4000)
    u = m[:, None] + np.sqrt(2 * m)[:, None] * _GH_X[None, :]
    vals = 1.0 - (np.tanh(u / 2) * _GH_W).sum(axis=1) / _GH_W.sum()
    # asymptotic form beyond the quadrature's reliable range
    big = m > 40
    vals[big] = np.sqrt(np.pi / m[big]) * np.exp(-m[big] / 4) * (1 - 10 / (7 * m[big]))
    return np.log(m), np.log(np.maximum(vals, 1e-300))


def phi(m):
    lm, lv = _table()
    m = np.asarray(m, dtype=float)
    out = np.exp(np.interp(np.log(np.maximum(m, 1e-6)), lm, lv))
    return np.where(m <= 0, 1.0, out)


def phi_inv(y):
    lm, lv = _table()
    y = np.asarray(y, dtype=float)
    # lv is decreasing in lm
    out = np.exp(np.interp(np.log(np.maximum(y, 1e-300)), lv[::-1], lm[::-1]))
    return np.where(y >= 1.0, 0.0, out)


def _check_mean(t, rho):
    """Check-to-variable mean for variable-to-check 'error' level ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for j, r in rho.items():
        out = out + r * phi_inv(1.0 - (1.0 - t) ** (j - 1))
    return out


def ga_converges(lam: dict, rho: dict, snr: float, iters: int = 2000) -> bool:
    m0 = 2.0 * snr
    t = 1.0
    for _ in range(iters):
        r = _check_mean(t, rho)
        t_new = sum(l * phi(m0 + (i - 1) * r) for i, l in lam.items())
        if t_new < 1e-9:
            return True
        if t_new >= t * (1 - 1e-7):
            return False
        t = float(t_new)
    return False


def ga_threshold(lam: dict, rho: dict, lo: float = 0.01, hi: float = 10.0) -> float:
    """Smallest SNR (1/sigma^2 for unit BPSK) at which GA decoding converges."""
    for _ in range(40):
        mid = np.sqrt(lo * hi)
        if ga_converges(lam, rho, mid):
            hi = mid
        else:
            lo = mid
    return hi


def optimize_lambda(snr: float, rho: dict, degrees, n_grid: int = 300, margin: float = 1e-4):
    """Rate-maximizing edge distribution over ``degrees`` that converges at ``snr``.

    Returns ``(lam, rate)`` or ``(None, 0)`` when infeasible.
    """
    degrees = list(degrees)
    m0 = 2.0 * snr
    t0 = float(phi(m0))
    ts = t0 * np.logspace(-6, 0, n_grid)
    r = _check_mean(ts, rho)
    A = np.array([[phi(m0 + (i - 1) * rr) for i in degrees] for rr in r])
    b = ts * (1 - margin)
    inv_dc = sum(v / j for j, v in rho.items())
    c = -np.array([1.0 / i for i in degrees])
    res = linprog(c, A_ub=A, b_ub=b, A_eq=np.ones((1, len(degrees))), b_eq=[1.0],
                  bounds=[(0, 1)] * len(degrees), method="highs")
    if not res.success:
        return None, 0.0
    lam = {i: float(x) for i, x in zip(degrees, res.x) if x > 1e-6}
    s = sum(lam.values())
    lam = {i: v / s for i, v in lam.items()}
    rate = 1.0 - inv_dc / sum(v / i for i, v in lam.items())
    return lam, rate


def _rho_for(dc_avg: float) -> dict:
    lo = int(np.floor(dc_avg))
    frac = dc_avg - lo
    # edge fractions for a node mix with average degree dc_avg
    if frac == 0:
        return {lo: 1.0}
    n_hi = frac
    n_lo = 1 - frac
    e_lo, e_hi = n_lo * lo, n_hi * (lo + 1)
    tot = e_lo + e_hi
    return {lo: e_lo / tot, lo + 1: e_hi / tot}


def design(rate: float, max_var_degree: int = 30, dc_range=None, tol: float = 1e-3):
    """Search check degrees and variable distribution minimizing the GA threshold.

    Returns ``(lam, rho, threshold_snr)``.
    """
    degrees = [2, 3] + [d for d in (4, 5, 6, 7, 8, 10, 12, 15, 20, 25, 30, 40, 50, 60, 80, 100)
                        if d <= max_var_degree]
    if dc_range is None:
        dc_range = np.arange(3.0, 12.01, 0.25)
    best = None
    for dc in dc_range:
        rho = _rho_for(float(dc))
        lo, hi = 1e-3, 20.0
        for _ in range(30):
            mid = np.sqrt(lo * hi)
            lam, r = optimize_lambda(mid, rho, degrees)
            if lam is not None and r >= rate:
                hi = mid
            else:
                lo = mid
            if hi / lo < 1 + tol:
                break
        lam, r = optimize_lambda(hi, rho, degrees)
        if lam is None:
            continue
        if best is None or hi < best[2]:
            best = (lam, rho, hi)
    return best


def edge_to_node(dist: dict) -> dict:
    w = {d: v / d for d, v in dist.items()}
    s = sum(w.values())
    return {d: v / s for d, v in w.items()}


def awgn_capacity(snr):
    return 0.5 * np.log2(1.0 + np.asarray(snr))


def biawgn_capacity(snr):
    snr = float(snr)
    s = 1.0 / np.sqrt(snr)
    y = 1.0 + s * _GH_X
    return 1.0 - float((np.logaddexp(0, -2 * y / s**2) * _GH_W).sum() / _GH_W.sum() / np.log(2))
