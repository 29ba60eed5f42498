"""Brute-force reference solvers that share no code with the optimisation layer."""

from __future__ import annotations

import itertools
import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def weight(h: int, kappa: float, tau: float) -> float:
    return (1.0 + tau * h * kappa) / (1.0 + h * kappa)


def loss_averse(x, x_hat, beta, lam):
    dev = x - x_hat
    return -lam * (1.0 + dev / (2.0 * beta * x_hat)) * dev


def golden_min(f, lo, hi, iters=200):
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a < 1e-13:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    return x, f(x)


def scan_then_refine(f, lo, hi, step):
    """Grid scan at ``step`` followed by golden-section search around the best point."""
    if hi - lo < 1e-15:
        return lo, f(lo)
    grid = np.arange(lo, hi + step / 2, step)
    grid = np.clip(grid, lo, hi)
    vals = np.array([f(x) for x in grid])
    k = int(np.argmin(vals))
    return golden_min(f, max(lo, grid[k] - step), min(hi, grid[k] + step))


def user_two_interval(x_hat, beta, pd_row, imp_charge, kappa, tau, delta_x=0.0, rebound_len=2,
                      lb=0.5, ub=1.5, floor=0.001, step=1e-3):
    """Optimal consumption of a PV-less user over a 2-interval horizon.

    Without PV every kWh is imported, so cost is linear in x plus discomfort.
    Returns (x, objective).
    """
    lam = max(max(pd_row), floor)
    price = np.asarray(pd_row) + np.asarray(imp_charge)

    def total(x):
        return sum(price[h] * x[h] + weight(h + 1, kappa, tau) * loss_averse(x[h], x_hat[h], beta[h], lam)
                   for h in range(2))

    lo = [lb * v for v in x_hat]
    hi = [ub * v for v in x_hat]
    if rebound_len == 2:
        s = x_hat[0] + x_hat[1] + delta_x
        a, b = max(lo[0], s - hi[1]), min(hi[0], s - lo[1])
        if a > b + 1e-12:
            raise ValueError("infeasible")
        x1, val = scan_then_refine(lambda v: total((v, s - v)), a, b, step)
        return np.array([x1, s - x1]), val
    x1 = x_hat[0] + delta_x
    if not lo[0] - 1e-12 <= x1 <= hi[0] + 1e-12:
        raise ValueError("infeasible")
    x2, val = scan_then_refine(lambda v: total((x1, v)), lo[1], hi[1], step)
    return np.array([x1, x2]), val


def user_sequential(x_hat_series, beta_series, pd, imp_series, kappa, tau, rebound_len=2, **kw):
    """Receding-horizon replay of :func:`user_two_interval` with carried deviation."""
    n = pd.shape[0]
    committed = np.zeros(n)
    delta = 0.0
    for j in range(n):
        x, _ = user_two_interval(x_hat_series[j:j + 2], beta_series[j:j + 2], pd[j], imp_series[j:j + 2],
                                 kappa, tau, delta, rebound_len, **kw)
        committed[j] = x[0]
        delta += x_hat_series[j] - x[0]
    return committed


def battery_horizon(net, exports, prices, e_cap, soc_init, peak_hist, user_peak, *, lam_peak, lam_grid,
                    lam_thp, dh=0.5, duration=2.0, soc_min=0.0, soc_max=1.0, step=0.25, ending=True):
    """Enumerate net battery power on a ``step`` kW grid (lossless battery).

    Returns (objective, best net power vector).  Positive power charges.
    """
    H = len(net)
    p_max = e_cap / duration
    levels = np.arange(-p_max, p_max + step / 2, step)
    levels = levels[np.abs(levels) <= p_max + 1e-12]
    P = np.array(list(itertools.product(levels, repeat=H)))
    soc = soc_init + np.cumsum(P * dh, axis=1)
    ok = np.all(soc >= soc_min * e_cap - 1e-9, axis=1) & np.all(soc <= soc_max * e_cap + 1e-9, axis=1)
    if ending:
        ok &= np.abs(soc[:, -1] - soc_init) <= 1e-9
    P = P[ok]
    imp = np.maximum(np.asarray(net)[None, :] + P * dh, 0.0)
    charge = np.maximum(P, 0.0)
    discharge = np.maximum(-P, 0.0)
    grid = np.maximum(charge * dh - np.asarray(exports)[None, :], 0.0)
    peak = np.maximum(peak_hist, imp.max(axis=1) / dh)
    cost = (imp @ np.asarray(prices) + lam_grid * grid.sum(axis=1) + lam_thp * dh * discharge.sum(axis=1)
            + lam_peak * (peak - user_peak))
    k = int(np.argmin(cost))
    return float(cost[k]), P[k]
